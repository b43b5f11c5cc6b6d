#pragma once

// Corpus manipulations: alternative-expression removal and within-pair
// frequency matching by greedy randomized deletion. Removal-only by
// construction: every output question appears verbatim in the input.

#include <string>
#include <vector>

#include "fwlab/question.hpp"

namespace fwlab {

struct RemovalSpec {
  // Forbidden surface forms, each a word or phrase matched on token
  // sequences (phrases greedily).
  std::vector<std::string> forms;
};

struct RemovalReport {
  long long removed_questions = 0;
  long long remaining_questions = 0;
  std::map<std::string, long long> removed_by_form;  // questions matching each form
  std::string to_json() const;
};

Corpus remove_questions_containing(const Corpus& corpus, const RemovalSpec& spec,
                                   RemovalReport* report = nullptr);

struct FrequencyTarget {
  std::string word_a, word_b;     // e.g. "and"/"or", "behind"/"in_front_of"
  double share_a = 50.0;          // target within-pair percentage of word_a
  double tolerance_pp = 0.5;      // percentage points
};

// Table-derived child-directed-speech relative frequencies.
std::vector<FrequencyTarget> childes_targets(double tolerance_pp = 0.5);

struct PairOutcome {
  std::string pair;
  double target = 0.0;
  double achieved = 0.0;
  bool satisfied = false;        // within tolerance
  bool integer_limited = false;  // best achievable integer counts reached
};

struct MatchReport {
  std::vector<PairOutcome> pairs;
  long long removed_questions = 0;
  long long remaining_questions = 0;
  long long remaining_tokens = 0;
  bool feasible = true;
  std::string blocking_pair;  // set when infeasible
  std::string to_json() const;
};

// Deletes uniformly chosen questions containing only over-represented target
// words (preferring questions containing no other target word) until every
// pair is within tolerance or no deletable question remains. Deterministic
// given seed. Infeasibility is reported, not thrown: the best-effort corpus
// comes back with the blocking pair named.
Corpus match_pair_frequencies(const Corpus& corpus, const std::vector<FrequencyTarget>& targets,
                              uint64_t seed, MatchReport* report = nullptr);

}  // namespace fwlab
