#include <doctest.h>

#include <set>

#include "fwlab/corpus_ops.hpp"
#include "fwlab/util.hpp"

using namespace fwlab;

namespace {

Question make_q(const std::string& text, const std::string& answer = "yes") {
  Question q;
  q.tokens = split_ws(text);
  q.answer = answer;
  return q;
}

}  // namespace

TEST_CASE("removal drops exactly the matching questions, in order") {
  Corpus corpus = {
      make_q("are there cubes that are red and large ?"),
      make_q("how many things are red cubes or small spheres ?", "2"),
      make_q("is the cube behind the sphere ?", "no"),
      make_q("are there an equal number of cubes and spheres ?", "no"),
      make_q("are there the same number of cubes and spheres ?", "no"),
  };
  RemovalReport report;
  const auto out =
      remove_questions_containing(corpus, RemovalSpec{{"and"}}, &report);
  CHECK(out.size() == 2);
  CHECK(report.removed_questions == 3);
  CHECK(report.remaining_questions == 2);
  // independent recount of removed questions
  long long expect_removed = 0;
  for (const auto& q : corpus) expect_removed += count_occurrences(q.tokens, {"and"}) > 0;
  CHECK(report.removed_questions == expect_removed);
  // zero remaining occurrences, verified by scan
  for (const auto& q : out) CHECK(count_occurrences(q.tokens, {"and"}) == 0);
  // removal-only: outputs appear verbatim in input, preserving order
  CHECK(out[0].tokens == corpus[1].tokens);
  CHECK(out[1].tokens == corpus[2].tokens);
}

TEST_CASE("vacuous filter is the identity") {
  Corpus corpus = {make_q("is the cube behind the sphere ?", "no")};
  RemovalReport report;
  const auto out = remove_questions_containing(corpus, RemovalSpec{{"or"}}, &report);
  CHECK(out.size() == 1);
  CHECK(report.removed_questions == 0);
}

TEST_CASE("phrase forms remove equal and same-number variants together") {
  Corpus corpus = {
      make_q("are there an equal number of cubes and spheres ?", "no"),
      make_q("are there the same number of cubes and spheres ?", "no"),
      make_q("is the cube the same size as the sphere ?", "yes"),
      make_q("how many cubes are there ?", "3"),
  };
  const auto out =
      remove_questions_containing(corpus, RemovalSpec{{"equal", "same number"}});
  REQUIRE(out.size() == 2);
  for (const auto& q : out) {
    CHECK(count_occurrences(q.tokens, {"equal"}) == 0);
    CHECK(count_occurrences(q.tokens, split_ws("same number")) == 0);
  }
  // "same size" survives: only the "same number" phrase is forbidden
  CHECK(join(out[0].tokens) == "is the cube the same size as the sphere ?");
}

TEST_CASE("toy matching stops at the best integer-feasible counts") {
  Corpus corpus;
  for (int i = 0; i < 10; ++i)
    corpus.push_back(make_q("are there cubes that are red and large ?"));
  for (int i = 0; i < 10; ++i)
    corpus.push_back(make_q("how many things are red cubes or small spheres ?", "2"));
  MatchReport report;
  const auto out = match_pair_frequencies(
      corpus, {{"and", "or", 75.0, 0.1}}, 7, &report);
  // exhaustive recount of the 20-question toy: 10 and + 3 or is the closest
  // integer solution to 75/25
  long long n_and = 0, n_or = 0;
  for (const auto& q : out) {
    n_and += count_occurrences(q.tokens, {"and"});
    n_or += count_occurrences(q.tokens, {"or"});
  }
  CHECK(n_and == 10);
  CHECK(n_or == 3);
  REQUIRE(report.pairs.size() == 1);
  CHECK(report.pairs[0].achieved == doctest::Approx(100.0 * 10 / 13));
  CHECK_FALSE(report.pairs[0].satisfied);
  CHECK(report.pairs[0].integer_limited);
  CHECK_FALSE(report.feasible);
  CHECK(report.blocking_pair == "and/or");
  CHECK(report.removed_questions == 7);
  CHECK(report.remaining_questions == 13);
}

TEST_CASE("already-satisfied targets remove nothing") {
  Corpus corpus;
  for (int i = 0; i < 3; ++i)
    corpus.push_back(make_q("are there cubes that are red and large ?"));
  corpus.push_back(make_q("how many things are red cubes or small spheres ?", "2"));
  MatchReport report;
  const auto out = match_pair_frequencies(corpus, {{"and", "or", 75.0, 0.5}}, 3, &report);
  CHECK(out.size() == corpus.size());
  CHECK(report.removed_questions == 0);
  CHECK(report.feasible);
}

TEST_CASE("matching is removal-only, deterministic, and recountable") {
  Corpus corpus;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    switch (rng.uniform_u64(4)) {
      case 0: corpus.push_back(make_q("are there cubes that are red and large ?")); break;
      case 1:
        corpus.push_back(make_q("how many things are red cubes or small spheres ?", "2"));
        break;
      case 2: corpus.push_back(make_q("is the cube behind the sphere ?", "no")); break;
      default:
        corpus.push_back(make_q("is the cube in front of the sphere ?", "no"));
        break;
    }
    corpus.back().image_index = i;  // make each question identifiable
  }
  MatchReport r1, r2;
  const auto out1 = match_pair_frequencies(
      corpus, {{"and", "or", 80.0, 1.0}, {"behind", "in_front_of", 70.0, 2.0}}, 99, &r1);
  const auto out2 = match_pair_frequencies(
      corpus, {{"and", "or", 80.0, 1.0}, {"behind", "in_front_of", 70.0, 2.0}}, 99, &r2);
  REQUIRE(out1.size() == out2.size());
  for (size_t i = 0; i < out1.size(); ++i) CHECK(out1[i].image_index == out2[i].image_index);

  // removal-only with order preserved
  std::set<int> input_ids;
  for (const auto& q : corpus) input_ids.insert(q.image_index);
  int prev = -1;
  for (const auto& q : out1) {
    CHECK(input_ids.count(q.image_index) == 1);
    CHECK(q.image_index > prev);
    prev = q.image_index;
  }

  // achieved values equal an independent recount
  long long n_and = 0, n_or = 0, n_behind = 0, n_front = 0;
  for (const auto& q : out1) {
    n_and += count_occurrences(q.tokens, {"and"});
    n_or += count_occurrences(q.tokens, {"or"});
    n_behind += count_occurrences(q.tokens, {"behind"});
    n_front += count_occurrences(q.tokens, phrase_tokens("in_front_of"));
  }
  CHECK(r1.pairs[0].achieved == doctest::Approx(100.0 * n_and / (n_and + n_or)));
  CHECK(r1.pairs[1].achieved == doctest::Approx(100.0 * n_behind / (n_behind + n_front)));
  CHECK(std::abs(r1.pairs[0].achieved - 80.0) <= 1.0);
  CHECK(std::abs(r1.pairs[1].achieved - 70.0) <= 2.0);
  CHECK(r1.feasible);
}

TEST_CASE("missing pair is a data error; empty targets a usage error") {
  Corpus corpus = {make_q("is the cube behind the sphere ?", "no")};
  CHECK_THROWS_AS(match_pair_frequencies(corpus, {{"more", "fewer", 99.1, 0.5}}, 1, nullptr),
                  DataError);
  CHECK_THROWS_AS(match_pair_frequencies(corpus, {}, 1, nullptr), UsageError);
  CHECK_THROWS_AS(remove_questions_containing(corpus, RemovalSpec{{}}, nullptr), UsageError);
}

TEST_CASE("childes targets carry the table constants") {
  const auto targets = childes_targets(0.5);
  REQUIRE(targets.size() == 3);
  CHECK(targets[0].word_a == "and");
  CHECK(targets[0].share_a == doctest::Approx(90.45));
  CHECK(targets[1].word_b == "in_front_of");
  CHECK(targets[1].share_a == doctest::Approx(79.62));
  CHECK(targets[2].share_a == doctest::Approx(99.10));
}
