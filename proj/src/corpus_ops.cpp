#include "fwlab/corpus_ops.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "fwlab/rng.hpp"
#include "fwlab/util.hpp"

namespace fwlab {

using nlohmann::json;

std::string RemovalReport::to_json() const {
  json j;
  j["removed_questions"] = removed_questions;
  j["remaining_questions"] = remaining_questions;
  j["removed_by_form"] = removed_by_form;
  return j.dump(2);
}

Corpus remove_questions_containing(const Corpus& corpus, const RemovalSpec& spec,
                                   RemovalReport* report) {
  if (spec.forms.empty()) throw UsageError("removal spec must name at least one form");
  std::vector<std::vector<std::string>> phrases;
  for (const auto& form : spec.forms) phrases.push_back(split_ws(form));

  RemovalReport rep;
  Corpus out;
  out.reserve(corpus.size());
  for (const auto& q : corpus) {
    bool matched = false;
    for (size_t i = 0; i < phrases.size(); ++i) {
      if (count_occurrences(q.tokens, phrases[i]) > 0) {
        rep.removed_by_form[spec.forms[i]] += 1;
        matched = true;
      }
    }
    if (matched)
      rep.removed_questions += 1;
    else
      out.push_back(q);
  }
  rep.remaining_questions = static_cast<long long>(out.size());
  if (report) *report = rep;
  return out;
}

std::vector<FrequencyTarget> childes_targets(double tolerance_pp) {
  return {
      {"and", "or", 90.45, tolerance_pp},
      {"behind", "in_front_of", 79.62, tolerance_pp},
      {"more", "fewer", 99.10, tolerance_pp},
  };
}

namespace {

struct PairState {
  FrequencyTarget target;
  long long count_a = 0;  // occurrences, not questions
  long long count_b = 0;

  static double share(long long a, long long b) {
    const double total = static_cast<double>(a + b);
    return total == 0.0 ? 0.0 : 100.0 * static_cast<double>(a) / total;
  }
  double share_a() const { return share(count_a, count_b); }
  double deviation() const { return std::abs(share_a() - target.share_a); }
  bool satisfied() const { return deviation() <= target.tolerance_pp; }
  // Integer feasibility: removing even one occurrence of the over side would
  // move the share past the target by more than it is off now, so the current
  // counts are the best integers available.
  bool integer_limited() const {
    const int side = raw_over_side();
    if (side < 0) return false;
    const long long na = side == 0 ? count_a - 1 : count_a;
    const long long nb = side == 0 ? count_b : count_b - 1;
    if (na + nb <= 0) return false;
    return std::abs(share(na, nb) - target.share_a) > deviation();
  }
  // Index of the over-represented word (0 = a, 1 = b) ignoring stop rules.
  int raw_over_side() const {
    if (satisfied()) return -1;
    return share_a() > target.share_a ? 0 : 1;
  }
  // Active over side: -1 once satisfied or integer-limited.
  int over_side() const {
    if (satisfied() || integer_limited()) return -1;
    return raw_over_side();
  }
};

}  // namespace

std::string MatchReport::to_json() const {
  json j;
  j["pairs"] = json::array();
  for (const auto& p : pairs)
    j["pairs"].push_back({{"pair", p.pair},
                          {"target", p.target},
                          {"achieved", p.achieved},
                          {"satisfied", p.satisfied},
                          {"integer_limited", p.integer_limited}});
  j["removed_questions"] = removed_questions;
  j["remaining_questions"] = remaining_questions;
  j["remaining_tokens"] = remaining_tokens;
  j["feasible"] = feasible;
  if (!feasible) j["blocking_pair"] = blocking_pair;
  return j.dump(2);
}

Corpus match_pair_frequencies(const Corpus& corpus, const std::vector<FrequencyTarget>& targets,
                              uint64_t seed, MatchReport* report) {
  if (targets.empty()) throw UsageError("no frequency targets given");

  // Word id space: 2*i for targets[i].word_a, 2*i+1 for word_b.
  const int n_words = static_cast<int>(targets.size()) * 2;
  std::vector<std::vector<std::string>> word_phrases(n_words);
  std::vector<PairState> pairs(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) {
    pairs[i].target = targets[i];
    word_phrases[2 * i] = phrase_tokens(targets[i].word_a);
    word_phrases[2 * i + 1] = phrase_tokens(targets[i].word_b);
  }

  // Per-question target word occurrence footprints.
  struct Entry {
    std::vector<std::pair<int, int>> occurrences;  // (word id, count)
    bool alive = true;
  };
  std::vector<Entry> entries(corpus.size());
  for (size_t qi = 0; qi < corpus.size(); ++qi) {
    for (int w = 0; w < n_words; ++w) {
      const int n = count_occurrences(corpus[qi].tokens, word_phrases[w]);
      if (n > 0) entries[qi].occurrences.push_back({w, n});
    }
    for (const auto& [w, n] : entries[qi].occurrences)
      (w % 2 == 0 ? pairs[w / 2].count_a : pairs[w / 2].count_b) += n;
  }
  for (const auto& p : pairs)
    if (p.count_a + p.count_b == 0)
      throw DataError("pair " + p.target.word_a + "/" + p.target.word_b +
                      " absent from corpus");

  Rng rng(seed);
  long long removed = 0;

  auto compute_over = [&] {
    std::set<int> over;
    for (size_t i = 0; i < pairs.size(); ++i) {
      const int side = pairs[i].over_side();
      if (side >= 0) over.insert(static_cast<int>(2 * i) + side);
    }
    return over;
  };

  // Candidate pools are valid as long as the over-represented word set is
  // unchanged (footprints are static, so candidacy only shrinks by deletion);
  // they are rebuilt whenever a pair gets satisfied or a word flips sides.
  while (true) {
    const std::set<int> over = compute_over();
    if (over.empty()) break;

    // Deletable: contains at least one over-represented word and nothing but
    // over-represented words; tier 1 prefers questions touching exactly one
    // tracked word, leaving overlapping questions as a last resort.
    std::vector<size_t> tier1, tier2;
    for (size_t qi = 0; qi < entries.size(); ++qi) {
      const auto& e = entries[qi];
      if (!e.alive || e.occurrences.empty()) continue;
      bool all_over = true;
      for (const auto& [w, n] : e.occurrences)
        if (!over.count(w)) all_over = false;
      if (!all_over) continue;
      (e.occurrences.size() == 1 ? tier1 : tier2).push_back(qi);
    }
    if (tier1.empty() && tier2.empty()) break;  // infeasible

    while (compute_over() == over) {
      auto& pool = tier1.empty() ? tier2 : tier1;
      if (pool.empty()) break;
      const size_t pick = rng.uniform_u64(pool.size());
      const size_t qi = pool[pick];
      pool[pick] = pool.back();
      pool.pop_back();
      entries[qi].alive = false;
      ++removed;
      for (const auto& [w, n] : entries[qi].occurrences)
        (w % 2 == 0 ? pairs[w / 2].count_a : pairs[w / 2].count_b) -= n;
    }
  }

  Corpus out;
  out.reserve(corpus.size());
  long long tokens = 0;
  for (size_t qi = 0; qi < corpus.size(); ++qi) {
    if (!entries[qi].alive) continue;
    out.push_back(corpus[qi]);
    tokens += static_cast<long long>(corpus[qi].tokens.size());
  }

  if (report) {
    report->pairs.clear();
    report->feasible = true;
    report->blocking_pair.clear();
    for (const auto& p : pairs) {
      PairOutcome o;
      o.pair = p.target.word_a + "/" + p.target.word_b;
      o.target = p.target.share_a;
      o.achieved = p.share_a();
      o.satisfied = p.satisfied();
      o.integer_limited = p.integer_limited();
      if (!o.satisfied) {
        report->feasible = false;
        report->blocking_pair = o.pair;
      }
      report->pairs.push_back(o);
    }
    report->removed_questions = removed;
    report->remaining_questions = static_cast<long long>(out.size());
    report->remaining_tokens = tokens;
  }
  return out;
}

}  // namespace fwlab
