#include "fwlab/question.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fwlab/rng.hpp"
#include "fwlab/util.hpp"

namespace fwlab {

using nlohmann::json;

const std::vector<std::string>& training_families() {
  static const std::vector<std::string> families = {
      "exist_simple", "exist_and",     "exist_and_rel", "count_and",    "count_or",
      "count_simple", "query_attr",    "spatial_exist", "spatial_query", "compare_more",
      "compare_fewer", "compare_equal", "same_attr"};
  return families;
}

namespace {

std::vector<std::string> words(const std::string& s) { return split_ws(s); }

std::vector<std::string> relation_tokens(const std::string& relation) {
  if (relation == "behind") return {"behind"};
  if (relation == "front") return {"in", "front", "of"};
  throw UsageError("unknown relation: " + relation);
}

void append(std::vector<std::string>& out, const std::vector<std::string>& part) {
  out.insert(out.end(), part.begin(), part.end());
}

}  // namespace

std::vector<std::string> realize_text(const std::string& family, const Bindings& b) {
  std::vector<std::string> t;
  const auto dim = [&] { return std::string(catalog::dim_name(b.attr_dim)); };
  if (family == "exist_simple") {
    t = words("are there any");
    append(t, words(b.x.text_plural()));
  } else if (family == "exist_and") {
    t = words("are there any " + b.x.noun() + "s that are");
    t.push_back(std::string(b.alpha.name()));
    t.push_back("and");
    t.push_back(std::string(b.beta.name()));
  } else if (family == "exist_and_rel") {
    t = words("are there any " + b.x.noun() + "s that are");
    t.push_back(std::string(b.alpha.name()));
    t.push_back("and");
    append(t, relation_tokens(b.relation));
    t.push_back("the");
    append(t, words(b.y.text()));
  } else if (family == "count_and") {
    t = words("how many " + b.x.noun() + "s are");
    t.push_back(std::string(b.alpha.name()));
    t.push_back("and");
    t.push_back(std::string(b.beta.name()));
  } else if (family == "count_or") {
    t = words("how many things are");
    append(t, words(b.x.text_plural()));
    t.push_back("or");
    append(t, words(b.y.text_plural()));
  } else if (family == "count_simple") {
    t = words("how many");
    append(t, words(b.x.text_plural()));
    append(t, words("are there"));
  } else if (family == "query_attr") {
    t = {"what", dim(), "is", "the"};
    append(t, words(b.x.text()));
  } else if (family == "spatial_exist") {
    t = words("is there a");
    append(t, words(b.x.text()));
    append(t, relation_tokens(b.relation));
    t.push_back("the");
    append(t, words(b.y.text()));
  } else if (family == "spatial_query") {
    t = {"what", dim(), "is", "the", "thing"};
    append(t, relation_tokens(b.relation));
    t.push_back("the");
    append(t, words(b.y.text()));
  } else if (family == "compare_more" || family == "compare_fewer") {
    t = {"are", "there", family == "compare_more" ? "more" : "fewer"};
    append(t, words(b.x.text_plural()));
    t.push_back("than");
    append(t, words(b.y.text_plural()));
  } else if (family == "compare_equal") {
    t = b.variant == 0 ? words("are there an equal number of")
                       : words("are there the same number of");
    append(t, words(b.x.text_plural()));
    t.push_back("and");
    append(t, words(b.y.text_plural()));
  } else if (family == "same_attr") {
    t = words("is the");
    append(t, words(b.x.text()));
    t.push_back("the");
    t.push_back("same");
    t.push_back(dim());
    t.push_back("as");
    t.push_back("the");
    append(t, words(b.y.text()));
  } else if (family == "probe_and" || family == "probe_or") {
    t = words("are there");
    append(t, words(b.x.text_plural()));
    append(t, words("that are"));
    t.push_back(std::string(b.alpha.name()));
    t.push_back(family == "probe_and" ? "and" : "or");
    t.push_back(std::string(b.beta.name()));
  } else if (family == "probe_spatial") {
    t = words("is the");
    append(t, words(b.x.text()));
    append(t, relation_tokens(b.relation));
    t.push_back("the");
    append(t, words(b.y.text()));
  } else if (family == "probe_more" || family == "probe_fewer") {
    t = {"are", "there", family == "probe_more" ? "more" : "fewer", "of", "the"};
    append(t, words(b.x.text_plural()));
    append(t, words("than the"));
    append(t, words(b.y.text_plural()));
  } else if (family == "probe_same_set") {
    t = words("are the");
    append(t, words(b.x.text_plural()));
    t.push_back("the");
    t.push_back("same");
    t.push_back(dim());
  } else if (family == "probe_same_pair") {
    t = words("are the");
    append(t, words(b.x.text()));
    t.push_back("and");
    t.push_back("the");
    append(t, words(b.y.text()));
    t.push_back("the");
    t.push_back("same");
    t.push_back(dim());
  } else {
    throw UsageError("unknown template family: " + family);
  }
  t.push_back("?");
  return t;
}

namespace {

// Token-stream parser for the template inverses.
struct TokenCursor {
  const std::vector<std::string>& t;
  size_t i = 0;

  bool eat(const std::string& w) {
    if (i < t.size() && t[i] == w) {
      ++i;
      return true;
    }
    return false;
  }
  bool eat_all(const std::vector<std::string>& ws) {
    size_t save = i;
    for (const auto& w : ws)
      if (!eat(w)) {
        i = save;
        return false;
      }
    return true;
  }
  bool done() const { return i == t.size(); }
};

std::optional<std::string> strip_plural(const std::string& w) {
  if (w.size() > 1 && w.back() == 's') return w.substr(0, w.size() - 1);
  return std::nullopt;
}

std::optional<uint8_t> parse_noun(const std::string& w) {
  if (w == "thing") return std::nullopt;
  return catalog::value_index(catalog::Dim::Shape, w);
}

bool is_noun(const std::string& w) {
  if (w == "thing") return true;
  for (auto s : catalog::kShapes)
    if (s == w) return true;
  return false;
}

std::optional<catalog::Value> parse_modifier(const std::string& w) {
  for (const auto& v : catalog::modifier_values())
    if (v.name() == w) return v;
  return std::nullopt;
}

// Referent = [modifier] noun, singular or plural.
std::optional<Referent> parse_referent(TokenCursor& c, bool plural) {
  Referent r;
  if (c.i >= c.t.size()) return std::nullopt;
  if (auto mod = parse_modifier(c.t[c.i])) {
    r.modifier = mod;
    ++c.i;
  }
  if (c.i >= c.t.size()) return std::nullopt;
  std::string noun = c.t[c.i];
  if (plural) {
    auto stripped = strip_plural(noun);
    if (!stripped) return std::nullopt;
    noun = *stripped;
  }
  if (!is_noun(noun)) return std::nullopt;
  if (noun != "thing") r.shape = catalog::value_index(catalog::Dim::Shape, noun);
  ++c.i;
  return r;
}

std::optional<std::string> parse_relation(TokenCursor& c) {
  if (c.eat("behind")) return "behind";
  if (c.eat_all({"in", "front", "of"})) return "front";
  return std::nullopt;
}

std::optional<catalog::Dim> parse_dim(TokenCursor& c) {
  if (c.i >= c.t.size()) return std::nullopt;
  for (auto name : {"shape", "color", "material", "size"})
    if (c.t[c.i] == name) {
      ++c.i;
      return catalog::dim_from_name(name);
    }
  return std::nullopt;
}

std::optional<catalog::Value> parse_value(TokenCursor& c) {
  if (c.i >= c.t.size()) return std::nullopt;
  if (auto v = parse_modifier(c.t[c.i])) {
    ++c.i;
    return v;
  }
  return std::nullopt;
}

}  // namespace

std::optional<Bindings> match_bindings(const std::string& family,
                                       const std::vector<std::string>& tokens) {
  TokenCursor c{tokens};
  Bindings b;
  auto finish = [&]() -> std::optional<Bindings> {
    if (c.eat("?") && c.done()) return b;
    return std::nullopt;
  };

  if (family == "exist_simple") {
    if (!c.eat_all({"are", "there", "any"})) return std::nullopt;
    auto x = parse_referent(c, true);
    if (!x) return std::nullopt;
    b.x = *x;
    return finish();
  }
  if (family == "exist_and" || family == "count_and") {
    if (family == "exist_and" && !c.eat_all({"are", "there", "any"})) return std::nullopt;
    if (family == "count_and" && !c.eat_all({"how", "many"})) return std::nullopt;
    auto x = parse_referent(c, true);
    if (!x || x->modifier) return std::nullopt;
    b.x = *x;
    if (family == "exist_and" && !c.eat_all({"that", "are"})) return std::nullopt;
    if (family == "count_and" && !c.eat("are")) return std::nullopt;
    auto a = parse_value(c);
    if (!a || !c.eat("and")) return std::nullopt;
    auto beta = parse_value(c);
    if (!beta) return std::nullopt;
    b.alpha = *a;
    b.beta = *beta;
    return finish();
  }
  if (family == "exist_and_rel") {
    if (!c.eat_all({"are", "there", "any"})) return std::nullopt;
    auto x = parse_referent(c, true);
    if (!x || x->modifier) return std::nullopt;
    b.x = *x;
    if (!c.eat_all({"that", "are"})) return std::nullopt;
    auto a = parse_value(c);
    if (!a || !c.eat("and")) return std::nullopt;
    b.alpha = *a;
    auto rel = parse_relation(c);
    if (!rel || !c.eat("the")) return std::nullopt;
    b.relation = *rel;
    auto y = parse_referent(c, false);
    if (!y) return std::nullopt;
    b.y = *y;
    return finish();
  }
  if (family == "count_or") {
    if (!c.eat_all({"how", "many", "things", "are"})) return std::nullopt;
    auto x = parse_referent(c, true);
    if (!x || !c.eat("or")) return std::nullopt;
    auto y = parse_referent(c, true);
    if (!y) return std::nullopt;
    b.x = *x;
    b.y = *y;
    return finish();
  }
  if (family == "count_simple") {
    if (!c.eat_all({"how", "many"})) return std::nullopt;
    auto x = parse_referent(c, true);
    if (!x || !c.eat_all({"are", "there"})) return std::nullopt;
    b.x = *x;
    return finish();
  }
  if (family == "query_attr") {
    if (!c.eat("what")) return std::nullopt;
    auto dim = parse_dim(c);
    if (!dim || !c.eat_all({"is", "the"})) return std::nullopt;
    b.attr_dim = *dim;
    auto x = parse_referent(c, false);
    if (!x) return std::nullopt;
    b.x = *x;
    return finish();
  }
  if (family == "spatial_exist") {
    if (!c.eat_all({"is", "there", "a"})) return std::nullopt;
    auto x = parse_referent(c, false);
    if (!x) return std::nullopt;
    b.x = *x;
    auto rel = parse_relation(c);
    if (!rel || !c.eat("the")) return std::nullopt;
    b.relation = *rel;
    auto y = parse_referent(c, false);
    if (!y) return std::nullopt;
    b.y = *y;
    return finish();
  }
  if (family == "spatial_query") {
    if (!c.eat("what")) return std::nullopt;
    auto dim = parse_dim(c);
    if (!dim || !c.eat_all({"is", "the", "thing"})) return std::nullopt;
    b.attr_dim = *dim;
    auto rel = parse_relation(c);
    if (!rel || !c.eat("the")) return std::nullopt;
    b.relation = *rel;
    auto y = parse_referent(c, false);
    if (!y) return std::nullopt;
    b.y = *y;
    return finish();
  }
  if (family == "compare_more" || family == "compare_fewer") {
    if (!c.eat_all({"are", "there", family == "compare_more" ? "more" : "fewer"}))
      return std::nullopt;
    auto x = parse_referent(c, true);
    if (!x || !c.eat("than")) return std::nullopt;
    auto y = parse_referent(c, true);
    if (!y) return std::nullopt;
    b.x = *x;
    b.y = *y;
    return finish();
  }
  if (family == "compare_equal") {
    if (!c.eat_all({"are", "there"})) return std::nullopt;
    if (c.eat_all({"an", "equal", "number", "of"}))
      b.variant = 0;
    else if (c.eat_all({"the", "same", "number", "of"}))
      b.variant = 1;
    else
      return std::nullopt;
    auto x = parse_referent(c, true);
    if (!x || !c.eat("and")) return std::nullopt;
    auto y = parse_referent(c, true);
    if (!y) return std::nullopt;
    b.x = *x;
    b.y = *y;
    return finish();
  }
  if (family == "same_attr") {
    if (!c.eat_all({"is", "the"})) return std::nullopt;
    auto x = parse_referent(c, false);
    if (!x || !c.eat_all({"the", "same"})) return std::nullopt;
    b.x = *x;
    auto dim = parse_dim(c);
    if (!dim || !c.eat_all({"as", "the"})) return std::nullopt;
    b.attr_dim = *dim;
    auto y = parse_referent(c, false);
    if (!y) return std::nullopt;
    b.y = *y;
    return finish();
  }
  throw UsageError("unknown template family: " + family);
}

Program build_program(const std::string& family, const Bindings& b) {
  Program p;
  if (family == "exist_simple") {
    p.exist(p.filter_referent(b.x));
  } else if (family == "exist_and" || family == "count_and" || family == "probe_and") {
    const int base = p.filter_referent(b.x);
    const int both = p.filter(p.filter(base, b.alpha), b.beta);
    family == "count_and" ? p.count(both) : p.exist(both);
  } else if (family == "exist_and_rel") {
    const int base = p.filter(p.filter_referent(b.x), b.alpha);
    const int rel = p.relate(p.filter_referent(b.y), b.relation);
    p.exist(p.set_intersect(base, rel));
  } else if (family == "count_or") {
    p.count(p.set_union(p.filter_referent(b.x), p.filter_referent(b.y)));
  } else if (family == "count_simple") {
    p.count(p.filter_referent(b.x));
  } else if (family == "query_attr") {
    p.query(p.filter_referent(b.x), b.attr_dim);
  } else if (family == "spatial_exist") {
    const int rel = p.relate(p.filter_referent(b.y), b.relation);
    p.exist(p.set_intersect(p.filter_referent(b.x), rel));
  } else if (family == "spatial_query") {
    p.query(p.relate(p.filter_referent(b.y), b.relation), b.attr_dim);
  } else if (family == "compare_more" || family == "probe_more") {
    p.greater_than(p.count(p.filter_referent(b.x)), p.count(p.filter_referent(b.y)));
  } else if (family == "compare_fewer" || family == "probe_fewer") {
    p.less_than(p.count(p.filter_referent(b.x)), p.count(p.filter_referent(b.y)));
  } else if (family == "compare_equal") {
    p.equal_integer(p.count(p.filter_referent(b.x)), p.count(p.filter_referent(b.y)));
  } else if (family == "same_attr" || family == "probe_same_pair") {
    p.same_attr(p.filter_referent(b.x), p.filter_referent(b.y), b.attr_dim);
  } else {
    throw UsageError("no program for family: " + family);
  }
  return p;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush_word = [&] {
    if (word.empty()) return;
    // Peel trailing '?' / ';' off the word, preserving order.
    std::string tail;
    while (!word.empty() && (word.back() == '?' || word.back() == ';')) {
      tail.insert(tail.begin(), word.back());
      word.pop_back();
    }
    if (!word.empty()) out.push_back(word);
    for (char c : tail) out.push_back(std::string(1, c));
    word.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush_word();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush_word();
  return out;
}

std::string question_to_jsonl(const Question& q) {
  json j;
  j["text"] = join(q.tokens);
  j["image_index"] = q.image_index;
  j["answer"] = q.answer;
  j["family"] = q.family;
  if (!q.program_json.empty())
    j["program"] = json::parse(q.program_json);
  else
    j["program"] = json::array();
  return j.dump();
}

Question question_from_jsonl(const std::string& line) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) throw DataError("bad corpus line: " + line);
  Question q;
  q.tokens = split_ws(j.at("text").get<std::string>());
  q.image_index = j.at("image_index").get<int>();
  q.answer = j.at("answer").get<std::string>();
  q.family = j.value("family", "");
  if (j.contains("program") && j["program"].is_array() && !j["program"].empty())
    q.program_json = j["program"].dump();
  return q;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& q : corpus) out << question_to_jsonl(q) << "\n";
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    corpus.push_back(question_from_jsonl(line));
  }
  return corpus;
}

CorpusPreset CorpusPreset::clevr_like() {
  CorpusPreset p;
  p.name = "clevr-like";
  // "or" appears only in count questions so no or-question has a yes/no
  // answer, matching the source distribution; "and" spans several families.
  p.family_weights = {
      {"exist_simple", 0.09}, {"exist_and", 0.10},     {"exist_and_rel", 0.04},
      {"count_and", 0.06},    {"count_or", 0.12},      {"count_simple", 0.04},
      {"query_attr", 0.09},   {"spatial_exist", 0.11}, {"spatial_query", 0.09},
      {"compare_more", 0.08}, {"compare_fewer", 0.08}, {"compare_equal", 0.05},
      {"same_attr", 0.05},
  };
  return p;
}

namespace {

bool is_yes_no_family(const std::string& family) {
  return family == "exist_simple" || family == "exist_and" || family == "exist_and_rel" ||
         family == "spatial_exist" || family == "compare_more" || family == "compare_fewer" ||
         family == "compare_equal" || family == "same_attr";
}

// Dimensions a referent's surface terms give away.
std::set<catalog::Dim> given_dims(const Referent& r) {
  std::set<catalog::Dim> dims;
  if (r.shape) dims.insert(catalog::Dim::Shape);
  if (r.modifier) dims.insert(r.modifier->dim);
  return dims;
}

struct BindingSampler {
  const std::vector<Referent> with_modifier = [] {
    std::vector<Referent> out;
    for (const auto& r : all_referents(true))
      if (r.modifier) out.push_back(r);
    return out;
  }();
  const std::vector<Referent> non_bare_thing = all_referents(false);

  Referent pick(const std::vector<Referent>& pool, Rng& rng) const {
    return pool[rng.uniform_u64(pool.size())];
  }

  // Unordered property pair from two distinct non-shape dimensions, neither
  // matching `exclude`; canonical order (color < material < size, then index).
  std::pair<catalog::Value, catalog::Value> property_pair(Rng& rng,
                                                          const std::set<catalog::Dim>& exclude) {
    const auto& mods = catalog::modifier_values();
    while (true) {
      const auto a = mods[rng.uniform_u64(mods.size())];
      const auto b = mods[rng.uniform_u64(mods.size())];
      if (a.dim == b.dim) continue;
      if (exclude.count(a.dim) || exclude.count(b.dim)) continue;
      auto key = [](const catalog::Value& v) {
        return static_cast<int>(v.dim) * 16 + v.index;
      };
      return key(a) < key(b) ? std::make_pair(a, b) : std::make_pair(b, a);
    }
  }

  std::string pick_relation(Rng& rng) const { return rng.bernoulli(0.5) ? "behind" : "front"; }

  Bindings sample(const std::string& family, Rng& rng) {
    Bindings b;
    if (family == "exist_simple" || family == "count_simple") {
      b.x = pick(non_bare_thing, rng);
    } else if (family == "exist_and" || family == "count_and") {
      b.x.shape = rng.bernoulli(0.25) ? std::optional<uint8_t>{}
                                      : std::optional<uint8_t>{static_cast<uint8_t>(
                                            rng.uniform_u64(catalog::kShapes.size()))};
      auto [a, beta] = property_pair(rng, {});
      b.alpha = a;
      b.beta = beta;
    } else if (family == "exist_and_rel") {
      b.x.shape = static_cast<uint8_t>(rng.uniform_u64(catalog::kShapes.size()));
      const auto& mods = catalog::modifier_values();
      b.alpha = mods[rng.uniform_u64(mods.size())];
      b.relation = pick_relation(rng);
      b.y = pick(non_bare_thing, rng);
    } else if (family == "count_or") {
      do {
        b.x = pick(with_modifier, rng);
        b.y = pick(with_modifier, rng);
      } while (b.x == b.y);
    } else if (family == "query_attr") {
      do {
        b.x = pick(non_bare_thing, rng);
        b.attr_dim = static_cast<catalog::Dim>(rng.uniform_u64(4));
      } while (given_dims(b.x).count(b.attr_dim));
    } else if (family == "spatial_exist") {
      do {
        b.x = pick(non_bare_thing, rng);
        b.y = pick(non_bare_thing, rng);
      } while (b.x == b.y);
      b.relation = pick_relation(rng);
    } else if (family == "spatial_query") {
      b.y = pick(non_bare_thing, rng);
      b.relation = pick_relation(rng);
      b.attr_dim = static_cast<catalog::Dim>(rng.uniform_u64(4));
    } else if (family == "compare_more" || family == "compare_fewer" ||
               family == "compare_equal") {
      do {
        b.x = pick(non_bare_thing, rng);
        b.y = pick(non_bare_thing, rng);
      } while (b.x == b.y);
      if (family == "compare_equal") b.variant = rng.bernoulli(0.5) ? 1 : 0;
    } else if (family == "same_attr") {
      while (true) {
        b.x = pick(non_bare_thing, rng);
        b.y = pick(non_bare_thing, rng);
        if (b.x == b.y) continue;
        std::vector<catalog::Dim> allowed;
        auto gx = given_dims(b.x), gy = given_dims(b.y);
        for (int d = 0; d < 4; ++d) {
          auto dim = static_cast<catalog::Dim>(d);
          if (!gx.count(dim) && !gy.count(dim)) allowed.push_back(dim);
        }
        if (allowed.empty()) continue;
        b.attr_dim = allowed[rng.uniform_u64(allowed.size())];
        break;
      }
    } else {
      throw UsageError("unknown family: " + family);
    }
    return b;
  }
};

// same_attr and spatial templates only make sense when the two descriptions
// resolve to different objects.
bool needs_distinct_objects(const std::string& family) { return family == "same_attr"; }

}  // namespace

Corpus generate_training_corpus(const std::vector<Scene>& scenes, const CorpusPreset& preset,
                                int size, uint64_t seed) {
  if (scenes.empty() && size > 0) throw UsageError("empty scene pool");
  Rng rng(seed);
  BindingSampler sampler;

  double total_weight = 0;
  for (const auto& [family, w] : preset.family_weights) total_weight += w;
  if (total_weight <= 0) throw UsageError("preset weights must be positive");

  std::map<std::string, std::pair<long long, long long>> yes_no_counts;
  Corpus corpus;
  corpus.reserve(size);

  for (int emitted = 0; emitted < size; ++emitted) {
    // Family by mixture weight.
    double roll = rng.uniform_real() * total_weight;
    std::string family = preset.family_weights.back().first;
    for (const auto& [name, w] : preset.family_weights) {
      if (roll < w) {
        family = name;
        break;
      }
      roll -= w;
    }

    // Yes/no families chase the under-represented answer so each family stays
    // within the balance band.
    std::optional<std::string> target;
    if (is_yes_no_family(family)) {
      auto& [yes, no] = yes_no_counts[family];
      target = yes <= no ? "yes" : "no";
    }

    bool ok = false;
    for (int attempt = 0; attempt < preset.retry_budget; ++attempt) {
      const Scene& scene = scenes[rng.uniform_u64(scenes.size())];
      Bindings b = sampler.sample(family, rng);
      Program program = build_program(family, b);
      auto answer = execute_program(program, scene);
      if (!answer) continue;  // presupposition failed in this scene
      if (target && *answer != *target) continue;
      if (needs_distinct_objects(family)) {
        auto xs = filter_objects(scene, b.x);
        auto ys = filter_objects(scene, b.y);
        if (xs.size() == 1 && ys.size() == 1 && xs[0] == ys[0]) continue;
      }
      Question q;
      q.tokens = realize_text(family, b);
      q.image_index = scene.image_index;
      q.answer = *answer;
      q.family = family;
      q.program_json = program_to_json(program);
      corpus.push_back(std::move(q));
      if (target) {
        auto& [yes, no] = yes_no_counts[family];
        (*answer == "yes" ? yes : no) += 1;
      }
      ok = true;
      break;
    }
    if (!ok)
      throw std::runtime_error("corpus generation exhausted retry budget for family \"" +
                               family + "\" (answer balance unsatisfiable with these scenes)");
  }
  return corpus;
}

Vocabulary Vocabulary::build(const Corpus& corpus) {
  std::set<std::string> tokens;
  for (const auto& q : corpus) {
    tokens.insert(q.tokens.begin(), q.tokens.end());
    tokens.insert(q.answer);
  }
  Vocabulary v;
  v.id_to_token = {"<pad>", "<unk>"};
  for (const auto& t : tokens) v.id_to_token.push_back(t);
  for (int i = 0; i < static_cast<int>(v.id_to_token.size()); ++i)
    v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

std::string Vocabulary::to_json() const {
  json j;
  j["tokens"] = id_to_token;
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  json j = json::parse(text);
  Vocabulary v;
  v.id_to_token = j.at("tokens").get<std::vector<std::string>>();
  for (int i = 0; i < static_cast<int>(v.id_to_token.size()); ++i)
    v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

const std::vector<std::pair<std::string, std::string>>& function_word_pairs() {
  static const std::vector<std::pair<std::string, std::string>> pairs = {
      {"and", "or"}, {"behind", "in_front_of"}, {"more", "fewer"}};
  return pairs;
}

std::vector<std::string> phrase_tokens(const std::string& word) {
  if (word == "in_front_of") return {"in", "front", "of"};
  return {word};
}

int count_occurrences(const std::vector<std::string>& tokens,
                      const std::vector<std::string>& phrase) {
  if (phrase.empty()) return 0;
  int n = 0;
  for (size_t i = 0; i + phrase.size() <= tokens.size();) {
    bool match = true;
    for (size_t k = 0; k < phrase.size(); ++k)
      if (tokens[i + k] != phrase[k]) {
        match = false;
        break;
      }
    if (match) {
      ++n;
      i += phrase.size();
    } else {
      ++i;
    }
  }
  return n;
}

namespace {

const std::vector<std::string>& tracked_words() {
  static const std::vector<std::string> w = {"and", "or", "behind", "in_front_of", "more",
                                             "fewer"};
  return w;
}

void accumulate_stats(FrequencyTable& table, const std::vector<std::string>& tokens,
                      const std::string& answer) {
  table.total_questions += 1;
  table.total_tokens += static_cast<long long>(tokens.size());
  for (const auto& word : tracked_words()) {
    const int n = count_occurrences(tokens, phrase_tokens(word));
    if (n == 0) continue;
    auto& stats = table.words[word];
    stats.raw += n;
    if (answer == "yes") stats.yes_q += 1;
    if (answer == "no") stats.no_q += 1;
  }
}

}  // namespace

double FrequencyTable::pair_share(const std::string& a, const std::string& b) const {
  const auto ita = words.find(a);
  const auto itb = words.find(b);
  const double ca = ita == words.end() ? 0.0 : static_cast<double>(ita->second.raw);
  const double cb = itb == words.end() ? 0.0 : static_cast<double>(itb->second.raw);
  if (ca + cb == 0.0) return 0.0;
  return 100.0 * ca / (ca + cb);
}

std::string FrequencyTable::to_json() const {
  json j;
  j["total_tokens"] = total_tokens;
  j["total_questions"] = total_questions;
  j["words"] = json::object();
  for (const auto& word : tracked_words()) {
    auto it = words.find(word);
    WordStats s = it == words.end() ? WordStats{} : it->second;
    j["words"][word] = {{"raw", s.raw}, {"yes", s.yes_q}, {"no", s.no_q}};
  }
  j["pairs"] = json::array();
  for (const auto& [a, b] : function_word_pairs()) {
    j["pairs"].push_back({{"pair", a + "/" + b},
                          {a, pair_share(a, b)},
                          {b, 100.0 - pair_share(a, b)}});
  }
  return j.dump(2);
}

FrequencyTable word_frequency_stats(const Corpus& corpus) {
  FrequencyTable table;
  for (const auto& q : corpus) accumulate_stats(table, q.tokens, q.answer);
  return table;
}

namespace {

// Rebuilds one JSON subtree from SAX events; used to carry a question's
// program through the import opaquely without holding the whole file.
struct SubtreeRecorder {
  json root;
  std::vector<json*> stack;
  std::string pending_key;
  bool done = false;

  json* attach(json&& value) {
    if (stack.empty()) {
      root = std::move(value);
      done = !root.is_structured();
      return &root;
    }
    json* top = stack.back();
    json* slot;
    if (top->is_array()) {
      top->push_back(std::move(value));
      slot = &top->back();
    } else {
      slot = &((*top)[pending_key] = std::move(value));
    }
    return slot;
  }
  void open(json&& container) { stack.push_back(attach(std::move(container))); }
  void close() {
    stack.pop_back();
    if (stack.empty()) done = true;
  }
};

// SAX consumer for original-format question files: pulls out the question
// text, answer, image_index, and raw program of each element of the top-level
// "questions" array without building a DOM for the (potentially very large)
// file.
struct QuestionSax : nlohmann::json_sax<json> {
  std::function<void(const std::string&, const std::string&, int, json&&)> on_question;
  bool capture_program = false;

  int depth = 0;
  bool in_questions = false;
  int question_depth = -1;
  std::string last_key;
  std::string question_text, answer;
  long long image_index = 0;
  long long count = 0;
  std::optional<SubtreeRecorder> recorder;

  bool recording() const { return recorder && !recorder->done; }

  bool key(string_t& val) override {
    if (recording()) {
      recorder->pending_key = val;
      return true;
    }
    last_key = val;
    if (depth == 1 && val == "questions") in_questions = true;
    return true;
  }
  bool start_object(std::size_t) override {
    if (recording()) {
      recorder->open(json::object());
      return true;
    }
    ++depth;
    if (in_questions && question_depth < 0 && depth == 2) {
      question_depth = depth;
      question_text.clear();
      answer.clear();
      image_index = 0;
      recorder.reset();
    }
    return true;
  }
  bool end_object() override {
    if (recording()) {
      recorder->close();
      return true;
    }
    if (depth == question_depth) {
      json program = recorder && recorder->done ? std::move(recorder->root) : json();
      on_question(question_text, answer, static_cast<int>(image_index), std::move(program));
      ++count;
      question_depth = -1;
      recorder.reset();
    }
    --depth;
    return true;
  }
  bool start_array(std::size_t) override {
    if (recording()) {
      recorder->open(json::array());
      return true;
    }
    if (capture_program && depth == question_depth && last_key == "program") {
      recorder.emplace();
      recorder->open(json::array());
    }
    return true;
  }
  bool end_array() override {
    if (recording()) {
      recorder->close();
      return true;
    }
    if (depth == 1) in_questions = false;
    return true;
  }
  bool string(string_t& val) override {
    if (recording()) {
      recorder->attach(json(val));
      return true;
    }
    if (depth == question_depth) {
      if (last_key == "question") question_text = val;
      if (last_key == "answer") answer = val;
    }
    return true;
  }
  bool number_integer(number_integer_t val) override {
    if (recording()) {
      recorder->attach(json(val));
      return true;
    }
    if (depth == question_depth && last_key == "image_index") image_index = val;
    return true;
  }
  bool number_unsigned(number_unsigned_t val) override {
    if (recording()) {
      recorder->attach(json(val));
      return true;
    }
    if (depth == question_depth && last_key == "image_index")
      image_index = static_cast<long long>(val);
    return true;
  }
  bool number_float(number_float_t val, const string_t&) override {
    if (recording()) recorder->attach(json(val));
    return true;
  }
  bool boolean(bool val) override {
    if (recording()) recorder->attach(json(val));
    return true;
  }
  bool null() override {
    if (recording()) recorder->attach(json(nullptr));
    return true;
  }
  bool binary(binary_t&) override { return true; }
  bool parse_error(std::size_t pos, const std::string&,
                   const nlohmann::detail::exception& ex) override {
    throw DataError("JSON parse error at byte " + std::to_string(pos) + ": " + ex.what());
  }
};

bool looks_like_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  char c = 0;
  while (in.get(c) && std::isspace(static_cast<unsigned char>(c))) {
  }
  return c == '{' && [&] {
    // JSONL corpus lines start with {"text"...; the big question files start
    // with an object too, so sniff the first key.
    std::string head(64, '\0');
    in.read(head.data(), 64);
    head.resize(static_cast<size_t>(in.gcount()));
    return head.find("\"questions\"") == std::string::npos &&
           head.find("\"info\"") == std::string::npos;
  }();
}

}  // namespace

FrequencyTable word_frequency_stats_file(const std::string& path) {
  FrequencyTable table;
  if (looks_like_jsonl(path)) {
    std::ifstream in(path, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      Question q = question_from_jsonl(line);
      accumulate_stats(table, q.tokens, q.answer);
    }
    return table;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  QuestionSax sax;
  sax.on_question = [&](const std::string& text, const std::string& answer, int, json&&) {
    accumulate_stats(table, tokenize(text), answer);
  };
  if (!json::sax_parse(in, &sax)) throw DataError("failed to parse questions file: " + path);
  return table;
}

long long import_questions_json(const std::string& path,
                                const std::function<void(Question&&)>& sink) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  QuestionSax sax;
  sax.capture_program = true;
  sax.on_question = [&](const std::string& text, const std::string& answer, int image_index,
                        json&& program) {
    Question q;
    q.tokens = tokenize(text);
    q.answer = answer;
    q.image_index = image_index;
    q.family = "imported";
    if (program.is_array() && !program.empty()) q.program_json = program.dump();
    sink(std::move(q));
  };
  if (!json::sax_parse(in, &sax)) throw DataError("failed to parse questions file: " + path);
  return sax.count;
}

int validate_corpus(const Corpus& corpus, const std::vector<Scene>& scenes) {
  std::unordered_map<int, const Scene*> by_index;
  for (const auto& s : scenes) by_index[s.image_index] = &s;
  int bad = 0;
  for (const auto& q : corpus) {
    if (q.program_json.empty()) continue;
    Program program;
    try {
      program = program_from_json(q.program_json);
      validate_program(program);
    } catch (const DataError&) {
      continue;  // imported passthrough program, not executable here
    }
    auto it = by_index.find(q.image_index);
    if (it == by_index.end()) {
      ++bad;
      continue;
    }
    auto answer = execute_program(program, *it->second);
    if (!answer || *answer != q.answer) ++bad;
  }
  return bad;
}

}  // namespace fwlab
