#include "fwlab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "fwlab/rng.hpp"
#include "fwlab/util.hpp"

namespace fwlab {

using nlohmann::json;

const std::vector<ProbeKind>& all_probe_kinds() {
  static const std::vector<ProbeKind> kinds = {
      ProbeKind::And,  ProbeKind::Or,    ProbeKind::Behind,  ProbeKind::InFrontOf,
      ProbeKind::More, ProbeKind::Fewer, ProbeKind::SameSet, ProbeKind::SamePair};
  return kinds;
}

std::string probe_name(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::And: return "AND";
    case ProbeKind::Or: return "OR";
    case ProbeKind::Behind: return "BEHIND";
    case ProbeKind::InFrontOf: return "IN_FRONT_OF";
    case ProbeKind::More: return "MORE";
    case ProbeKind::Fewer: return "FEWER";
    case ProbeKind::SameSet: return "SAME_SET";
    case ProbeKind::SamePair: return "SAME_PAIR";
  }
  throw std::logic_error("bad probe kind");
}

ProbeKind probe_from_name(const std::string& name) {
  for (auto kind : all_probe_kinds())
    if (probe_name(kind) == name) return kind;
  throw UsageError("unknown probe: " + name);
}

namespace {

std::set<catalog::Dim> given_dims(const Referent& r) {
  std::set<catalog::Dim> dims;
  if (r.shape) dims.insert(catalog::Dim::Shape);
  if (r.modifier) dims.insert(r.modifier->dim);
  return dims;
}

bool is_spatial(ProbeKind k) { return k == ProbeKind::Behind || k == ProbeKind::InFrontOf; }
bool is_count(ProbeKind k) { return k == ProbeKind::More || k == ProbeKind::Fewer; }
bool is_and_or(ProbeKind k) { return k == ProbeKind::And || k == ProbeKind::Or; }

std::string probe_family(ProbeKind k) {
  switch (k) {
    case ProbeKind::And: return "probe_and";
    case ProbeKind::Or: return "probe_or";
    case ProbeKind::Behind:
    case ProbeKind::InFrontOf: return "probe_spatial";
    case ProbeKind::More: return "probe_more";
    case ProbeKind::Fewer: return "probe_fewer";
    case ProbeKind::SameSet: return "probe_same_set";
    case ProbeKind::SamePair: return "probe_same_pair";
  }
  throw std::logic_error("bad probe kind");
}

}  // namespace

std::vector<Bindings> enumerate_bindings(const ProbeSpec& spec) {
  std::vector<Bindings> out;
  const auto& mods = catalog::modifier_values();

  if (is_and_or(spec.kind)) {
    for (const auto& r : all_referents(true)) {
      for (size_t i = 0; i < mods.size(); ++i) {
        for (size_t j = i + 1; j < mods.size(); ++j) {
          const auto& a = mods[i];
          const auto& b = mods[j];
          if (a.dim == b.dim) continue;
          if (r.modifier && (r.modifier->dim == a.dim || r.modifier->dim == b.dim)) continue;
          Bindings bind;
          bind.x = r;
          bind.alpha = a;  // canonical order comes from the modifier list
          bind.beta = b;
          out.push_back(bind);
        }
      }
    }
    return out;
  }

  if (is_spatial(spec.kind) || is_count(spec.kind)) {
    const auto refs = all_referents(false);
    for (const auto& x : refs) {
      for (const auto& y : refs) {
        if (x == y) continue;
        Bindings b;
        b.x = x;
        b.y = y;
        if (is_spatial(spec.kind))
          b.relation = spec.kind == ProbeKind::Behind ? "behind" : "front";
        out.push_back(b);
      }
    }
    return out;
  }

  if (spec.kind == ProbeKind::SameSet) {
    for (const auto& r : all_referents(true)) {
      const auto given = given_dims(r);
      for (int d = 0; d < 4; ++d) {
        const auto dim = static_cast<catalog::Dim>(d);
        if (given.count(dim)) continue;
        Bindings b;
        b.x = r;
        b.attr_dim = dim;
        out.push_back(b);
      }
    }
    return out;
  }

  // SAME_PAIR: unordered pairs of distinct descriptions.
  const auto refs = all_referents(false);
  for (size_t i = 0; i < refs.size(); ++i) {
    for (size_t j = i + 1; j < refs.size(); ++j) {
      auto gx = given_dims(refs[i]);
      auto gy = given_dims(refs[j]);
      for (int d = 0; d < 4; ++d) {
        const auto dim = static_cast<catalog::Dim>(d);
        if (gx.count(dim) || gy.count(dim)) continue;
        Bindings b;
        b.x = refs[i];
        b.y = refs[j];
        b.attr_dim = dim;
        out.push_back(b);
      }
    }
  }
  return out;
}

bool satisfies_presupposition(ProbeKind kind, const Scene& scene, const Bindings& b) {
  switch (kind) {
    case ProbeKind::And:
    case ProbeKind::Or:
      return true;
    case ProbeKind::Behind:
    case ProbeKind::InFrontOf: {
      const auto xs = filter_objects(scene, b.x);
      const auto ys = filter_objects(scene, b.y);
      if (xs.size() != 1 || ys.size() != 1 || xs[0] == ys[0]) return false;
      return scene.objects[xs[0]].y != scene.objects[ys[0]].y;
    }
    case ProbeKind::More:
    case ProbeKind::Fewer:
      return !filter_objects(scene, b.x).empty() && !filter_objects(scene, b.y).empty();
    case ProbeKind::SameSet:
      return filter_objects(scene, b.x).size() >= 2;
    case ProbeKind::SamePair: {
      const auto xs = filter_objects(scene, b.x);
      const auto ys = filter_objects(scene, b.y);
      return xs.size() == 1 && ys.size() == 1 && xs[0] != ys[0];
    }
  }
  return false;
}

std::vector<int> sample_images_for_question(const ProbeSpec& spec, const Bindings& b,
                                            const std::vector<Scene>& pool, int max_n,
                                            uint64_t seed) {
  std::vector<int> qualifying;
  for (const auto& scene : pool)
    if (satisfies_presupposition(spec.kind, scene, b)) qualifying.push_back(scene.image_index);
  if (static_cast<int>(qualifying.size()) > max_n) {
    Rng rng(seed);
    auto picks = rng.sample_without_replacement(qualifying.size(), max_n);
    std::vector<int> sampled;
    for (auto i : picks) sampled.push_back(qualifying[i]);
    std::sort(sampled.begin(), sampled.end());
    return sampled;
  }
  return qualifying;
}

AndOrResult and_or_answer(const Scene& scene, const Referent& x, const catalog::Value& alpha,
                          const catalog::Value& beta, bool connective_and) {
  bool any_both = false, any_alpha_only = false, any_beta_only = false;
  for (const auto& obj : scene.objects) {
    if (!x.matches(obj)) continue;
    const bool a = obj.has_value(alpha);
    const bool b = obj.has_value(beta);
    if (a && b) any_both = true;
    else if (a) any_alpha_only = true;
    else if (b) any_beta_only = true;
  }
  if (connective_and) {
    if (any_both) return {"yes", "both"};
    if (any_alpha_only) return {"no", "alpha_only"};
    if (any_beta_only) return {"no", "beta_only"};
    return {"no", "neither"};
  }
  if (any_alpha_only) return {"yes", "alpha_only"};
  if (any_beta_only) return {"yes", "beta_only"};
  if (any_both) return {"ambiguous", "both"};  // every witness satisfies both
  return {"no", "neither"};
}

namespace {

std::pair<const SceneObject*, const SceneObject*> unique_pair(const Scene& scene,
                                                              const Referent& x,
                                                              const Referent& y,
                                                              const char* what) {
  const auto xs = filter_objects(scene, x);
  const auto ys = filter_objects(scene, y);
  if (xs.size() != 1 || ys.size() != 1 || xs[0] == ys[0])
    throw UsageError(std::string(what) + ": presupposition violated (need exactly one X and "
                                         "one Y resolving to distinct objects)");
  return {&scene.objects[xs[0]], &scene.objects[ys[0]]};
}

}  // namespace

std::string spatial_answer(const Scene& scene, const Referent& x, const Referent& y,
                           bool behind_word) {
  auto [xo, yo] = unique_pair(scene, x, y, "spatial_answer");
  const auto behind = is_behind(*xo, *yo);
  if (!behind) throw UsageError("spatial_answer: y-tie, relation indeterminate");
  return (*behind == behind_word) ? "yes" : "no";
}

std::string count_answer(const Scene& scene, const Referent& x, const Referent& y,
                         bool more_word) {
  const auto nx = filter_objects(scene, x).size();
  const auto ny = filter_objects(scene, y).size();
  if (nx == 0 || ny == 0)
    throw UsageError("count_answer: presupposition violated (need at least one X and one Y)");
  if (nx == ny) return "no";
  return ((nx > ny) == more_word) ? "yes" : "no";
}

std::string same_set_answer(const Scene& scene, const Referent& x, catalog::Dim property) {
  const auto xs = filter_objects(scene, x);
  if (xs.size() < 2)
    throw UsageError("same_set_answer: presupposition violated (need at least two Xs)");
  const uint8_t first = scene.objects[xs[0]].attr(property);
  for (int id : xs)
    if (scene.objects[id].attr(property) != first) return "no";
  return "yes";
}

std::string same_pair_answer(const Scene& scene, const Referent& x, const Referent& y,
                             catalog::Dim property) {
  auto [xo, yo] = unique_pair(scene, x, y, "same_pair_answer");
  return xo->attr(property) == yo->attr(property) ? "yes" : "no";
}

namespace {

std::string enumeration_policy_text(const ProbeSpec& spec) {
  // Hashed into the manifest so suites built under different policies never
  // silently mix.
  return "probe=" + probe_name(spec.kind) +
         ";referents=4x13;and_or_pairs=cross_dim_excl_modifier;spatial_count=ordered_no_bare_"
         "thing;same=property_not_given;max_images=" +
         std::to_string(spec.max_images);
}

}  // namespace

std::vector<ProbeItem> build_probe(const ProbeSpec& spec, const std::vector<Scene>& pool,
                                   uint64_t seed, ProbeManifest* manifest) {
  if (pool.empty()) throw UsageError("empty probe scene pool");
  std::unordered_map<int, const Scene*> by_index;
  for (const auto& s : pool) by_index[s.image_index] = &s;

  const auto bindings = enumerate_bindings(spec);
  std::vector<ProbeItem> items;
  int n_questions = 0;

  for (size_t qi = 0; qi < bindings.size(); ++qi) {
    const auto& b = bindings[qi];
    const auto images =
        sample_images_for_question(spec, b, pool, spec.max_images, derive_seed(seed, qi));
    if (images.empty()) continue;
    ++n_questions;
    for (int image_index : images) {
      const Scene& scene = *by_index.at(image_index);
      ProbeItem item;
      item.kind = spec.kind;
      item.bindings = b;
      item.image_index = image_index;
      item.tokens = realize_text(probe_family(spec.kind), b);

      if (is_and_or(spec.kind)) {
        auto r = and_or_answer(scene, b.x, b.alpha, b.beta, spec.kind == ProbeKind::And);
        item.answer = r.answer;
        item.context = r.context;
      } else if (is_spatial(spec.kind)) {
        item.answer = spatial_answer(scene, b.x, b.y, spec.kind == ProbeKind::Behind);
        const auto xs = filter_objects(scene, b.x);
        const auto ys = filter_objects(scene, b.y);
        const auto& xo = scene.objects[xs[0]];
        const auto& yo = scene.objects[ys[0]];
        item.distance = euclidean_distance(xo, yo);
        item.distance_bin = static_cast<int>(std::lround(item.distance));
        item.context = *is_behind(xo, yo) ? "x_behind_y" : "x_in_front_of_y";
      } else if (is_count(spec.kind)) {
        item.answer = count_answer(scene, b.x, b.y, spec.kind == ProbeKind::More);
        const int nx = static_cast<int>(filter_objects(scene, b.x).size());
        const int ny = static_cast<int>(filter_objects(scene, b.y).size());
        item.has_count_diff = true;
        item.count_diff = nx - ny;
        item.context = nx > ny ? "x_more" : (nx < ny ? "y_more" : "equal");
      } else if (spec.kind == ProbeKind::SameSet) {
        item.answer = same_set_answer(scene, b.x, b.attr_dim);
        item.context = item.answer == "yes" ? "uniform" : "mixed";
      } else {
        item.answer = same_pair_answer(scene, b.x, b.y, b.attr_dim);
        item.context = item.answer == "yes" ? "matching" : "differing";
      }
      items.push_back(std::move(item));
    }
  }

  if (manifest) {
    manifest->probe = probe_name(spec.kind);
    manifest->n_questions = n_questions;
    manifest->n_items = static_cast<int>(items.size());
    manifest->items_by_context.clear();
    manifest->items_by_answer.clear();
    for (const auto& item : items) {
      manifest->items_by_context[item.context] += 1;
      manifest->items_by_answer[item.answer] += 1;
    }
    manifest->policy_hash = hash_hex(fnv1a(enumeration_policy_text(spec)));
  }
  return items;
}

std::string ProbeManifest::to_json() const {
  json j;
  j["probe"] = probe;
  j["n_questions"] = n_questions;
  j["n_items"] = n_items;
  j["items_by_context"] = items_by_context;
  j["items_by_answer"] = items_by_answer;
  j["policy_hash"] = policy_hash;
  return j.dump(2);
}

namespace {

json bindings_to_json(ProbeKind kind, const Bindings& b) {
  json j;
  j["x"] = b.x.text();
  if (is_and_or(kind)) {
    j["alpha"] = std::string(b.alpha.name());
    j["beta"] = std::string(b.beta.name());
  }
  if (is_spatial(kind) || is_count(kind) || kind == ProbeKind::SamePair) j["y"] = b.y.text();
  if (kind == ProbeKind::SameSet || kind == ProbeKind::SamePair)
    j["property"] = std::string(catalog::dim_name(b.attr_dim));
  return j;
}

Referent referent_from_text(const std::string& text) {
  const auto parts = split_ws(text);
  Referent r;
  size_t i = 0;
  if (parts.size() == 2) {
    for (const auto& v : catalog::modifier_values())
      if (v.name() == parts[0]) r.modifier = v;
    i = 1;
  }
  if (parts.at(i) != "thing")
    r.shape = catalog::value_index(catalog::Dim::Shape, parts.at(i));
  return r;
}

}  // namespace

std::string probe_item_to_jsonl(const ProbeItem& item) {
  json j;
  j["probe"] = probe_name(item.kind);
  j["text"] = join(item.tokens);
  j["image_index"] = item.image_index;
  j["answer"] = item.answer;
  j["context"] = item.context;
  j["distance"] = item.distance >= 0 ? json(item.distance) : json(nullptr);
  j["distance_bin"] = item.distance_bin >= 0 ? json(item.distance_bin) : json(nullptr);
  j["count_diff"] = item.has_count_diff ? json(item.count_diff) : json(nullptr);
  j["bindings"] = bindings_to_json(item.kind, item.bindings);
  return j.dump();
}

ProbeItem probe_item_from_jsonl(const std::string& line) {
  json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) throw DataError("bad probe line: " + line);
  ProbeItem item;
  item.kind = probe_from_name(j.at("probe").get<std::string>());
  item.tokens = split_ws(j.at("text").get<std::string>());
  item.image_index = j.at("image_index").get<int>();
  item.answer = j.at("answer").get<std::string>();
  item.context = j.at("context").get<std::string>();
  if (!j.at("distance").is_null()) item.distance = j["distance"].get<double>();
  if (!j.at("distance_bin").is_null()) item.distance_bin = j["distance_bin"].get<int>();
  if (!j.at("count_diff").is_null()) {
    item.has_count_diff = true;
    item.count_diff = j["count_diff"].get<int>();
  }
  const auto& b = j.at("bindings");
  item.bindings.x = referent_from_text(b.at("x").get<std::string>());
  if (b.contains("y")) item.bindings.y = referent_from_text(b["y"].get<std::string>());
  if (b.contains("alpha")) {
    for (const auto& v : catalog::modifier_values()) {
      if (v.name() == b["alpha"].get<std::string>()) item.bindings.alpha = v;
      if (v.name() == b["beta"].get<std::string>()) item.bindings.beta = v;
    }
  }
  if (b.contains("property"))
    item.bindings.attr_dim = catalog::dim_from_name(b["property"].get<std::string>());
  if (item.kind == ProbeKind::Behind) item.bindings.relation = "behind";
  if (item.kind == ProbeKind::InFrontOf) item.bindings.relation = "front";
  return item;
}

void save_probe(const std::string& path, const std::vector<ProbeItem>& items) {
  std::string out;
  for (const auto& item : items) {
    out += probe_item_to_jsonl(item);
    out += "\n";
  }
  write_file(path, out);
}

std::vector<ProbeItem> load_probe(const std::string& path) {
  std::vector<ProbeItem> items;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    items.push_back(probe_item_from_jsonl(line));
  }
  return items;
}

}  // namespace fwlab
