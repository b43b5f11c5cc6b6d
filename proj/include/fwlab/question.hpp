#pragma once

// Question templates, surface realization and its inverse, the training
// corpus generator, tokenization, vocabulary, and word/answer frequency
// statistics.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fwlab/program.hpp"
#include "fwlab/scene.hpp"

namespace fwlab {

// Template bindings; which fields are meaningful depends on the family.
struct Bindings {
  Referent x, y;
  catalog::Value alpha{catalog::Dim::Color, 0}, beta{catalog::Dim::Color, 0};
  catalog::Dim attr_dim = catalog::Dim::Color;
  std::string relation;  // "behind" | "front"
  int variant = 0;       // surface variant for families that have one
};

// Training template families. Surfaces deliberately differ from the probe
// templates so probes stay out-of-distribution.
//   exist_simple   are there any <X pl> ?
//   exist_and      are there any <noun pl> that are <a> and <b> ?
//   exist_and_rel  are there any <noun pl> that are <a> and <rel> the <Y> ?
//   count_and      how many <noun pl> are <a> and <b> ?
//   count_or       how many things are <X pl> or <Y pl> ?
//   count_simple   how many <X pl> are there ?
//   query_attr     what <dim> is the <X> ?
//   spatial_exist  is there a <X> <rel> the <Y> ?
//   spatial_query  what <dim> is the thing <rel> the <Y> ?
//   compare_more   are there more <X pl> than <Y pl> ?
//   compare_fewer  are there fewer <X pl> than <Y pl> ?
//   compare_equal  are there an equal number of <X pl> and <Y pl> ?
//                  variant 1: are there the same number of <X pl> and <Y pl> ?
//   same_attr      is the <X> the same <dim> as the <Y> ?
const std::vector<std::string>& training_families();

// Deterministic surface form; multiword values stay separate tokens and
// "in front of" realizes as three tokens. Throws UsageError on a family that
// does not exist or bindings that are incomplete for it.
std::vector<std::string> realize_text(const std::string& family, const Bindings& b);

// Inverse of realize_text for the same family; nullopt when the tokens do not
// match the family's pattern.
std::optional<Bindings> match_bindings(const std::string& family,
                                       const std::vector<std::string>& tokens);

// Program whose evaluation over a scene answers the realized question.
Program build_program(const std::string& family, const Bindings& b);

// Lowercases, splits on whitespace, detaches trailing '?' and ';' from words.
std::vector<std::string> tokenize(const std::string& text);

struct Question {
  std::vector<std::string> tokens;
  int image_index = 0;
  std::string answer;
  std::string family;
  std::string program_json;  // "[...]" or empty for imported passthrough-free items
};

std::string question_to_jsonl(const Question& q);
Question question_from_jsonl(const std::string& line);

using Corpus = std::vector<Question>;

void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

struct CorpusPreset {
  std::string name;
  std::vector<std::pair<std::string, double>> family_weights;
  double balance_band = 0.05;  // yes/no families stay within this band of 50/50
  int retry_budget = 20000;    // candidate draws per emitted question
  static CorpusPreset clevr_like();
};

// Deterministic given (scenes, preset, size, seed). Every emitted question's
// presuppositions hold in its scene; yes/no families are rejection-balanced.
// Throws std::runtime_error naming the family when the retry budget is
// exhausted.
Corpus generate_training_corpus(const std::vector<Scene>& scenes, const CorpusPreset& preset,
                                int size, uint64_t seed);

struct Vocabulary {
  std::vector<std::string> id_to_token;  // [0]="<pad>", [1]="<unk>"
  std::unordered_map<std::string, int> token_to_id;

  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  int id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }
  int size() const { return static_cast<int>(id_to_token.size()); }

  // Sorted unique question tokens plus answer tokens; stable across runs.
  static Vocabulary build(const Corpus& corpus);
  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);
};

struct WordStats {
  long long raw = 0;    // token (phrase) occurrences
  long long yes_q = 0;  // questions containing the word answered "yes"
  long long no_q = 0;
};

struct FrequencyTable {
  // Keyed by and, or, behind, in_front_of, more, fewer.
  std::map<std::string, WordStats> words;
  long long total_tokens = 0;
  long long total_questions = 0;

  // Within-pair percentage of `a` against `b`, in [0, 100].
  double pair_share(const std::string& a, const std::string& b) const;
  std::string to_json() const;
};

// The tracked function-word pairs, in report order.
const std::vector<std::pair<std::string, std::string>>& function_word_pairs();

// Occurrences of a word or phrase in a token sequence; "in front of" is
// matched greedily so "front" alone never counts.
int count_occurrences(const std::vector<std::string>& tokens,
                      const std::vector<std::string>& phrase);
std::vector<std::string> phrase_tokens(const std::string& word);  // "in_front_of" -> in,front,of

FrequencyTable word_frequency_stats(const Corpus& corpus);

// Streaming variant over a corpus JSONL file or an original-format questions
// JSON file ({"questions":[...]}).
FrequencyTable word_frequency_stats_file(const std::string& path);

// Streaming import of an original-format questions JSON file; calls sink once
// per question with the normalized Question (program passed through opaquely
// in program_json). Returns the number of questions.
long long import_questions_json(const std::string& path,
                                const std::function<void(Question&&)>& sink);

// Re-executes every structured program; returns the number of mismatching or
// undefined answers (0 for a sound corpus). Scenes are looked up by
// image_index.
int validate_corpus(const Corpus& corpus, const std::vector<Scene>& scenes);

}  // namespace fwlab
