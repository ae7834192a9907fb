#include <doctest.h>

#include "helpers.hpp"
#include "iwprm/errors.hpp"
#include "iwprm/generator.hpp"
#include "iwprm/selection.hpp"

using namespace iwprm;
using namespace iwprm::testing;

namespace {

CandidatePool pool_with_answers(const std::vector<std::string>& answers,
                                const std::string& truth) {
  CandidatePool p;
  p.id = "p0";
  p.question = "start 1 ; + 1 = ?";
  p.truth = truth;
  for (const auto& a : answers) {
    p.candidates.push_back(Candidate{{a}, a});
  }
  return p;
}

}  // namespace

TEST_CASE("mean aggregation") {
  const double one[] = {0.5};
  CHECK(aggregate_mean(one) == 0.5);
  const double three[] = {0.2, 0.4, 0.6};
  CHECK(aggregate_mean(three) == doctest::Approx(0.4).epsilon(1e-15));
  const double permuted[] = {0.6, 0.2, 0.4};
  CHECK(aggregate_mean(permuted) == doctest::Approx(aggregate_mean(three)).epsilon(1e-15));
  CHECK_THROWS_AS((void)aggregate_mean({}), ValidationError);
}

TEST_CASE("argmax over candidate means with deterministic ties") {
  const std::vector<std::vector<double>> dominated = {{0.4, 0.5}, {0.6, 0.7}, {0.5, 0.5}};
  CHECK(argmax_mean(dominated) == 1);

  const std::vector<std::vector<double>> tied = {{0.5, 0.5}, {0.4, 0.6}, {0.7, 0.3}};
  CHECK(argmax_mean(tied) == 0);  // all means equal -> lowest index

  const std::vector<std::vector<double>> single = {{0.9}};
  CHECK(argmax_mean(single) == 0);
}

TEST_CASE("argmax is invariant under positive affine maps of all scores") {
  Rng rng(55);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> scores(4);
    for (auto& s : scores) {
      const int n = static_cast<int>(rng.uniform_int(1, 5));
      for (int i = 0; i < n; ++i) s.push_back(rng.uniform01());
    }
    const size_t base = argmax_mean(scores);
    const double a = rng.uniform(0.1, 3.0);
    const double b = rng.uniform(-1.0, 1.0);
    auto mapped = scores;
    for (auto& s : mapped) {
      for (auto& v : s) v = a * v + b;
    }
    CHECK(argmax_mean(mapped) == base);
  }
}

TEST_CASE("select_best on a forced choice and on uniform scores") {
  const Vocab vocab = synthetic_vocab(kChainModulus);
  Rng rng(3);
  PrmParams phi = PrmParams::init(vocab.size(), 4, rng);  // zero head: all scores 0.5

  CandidatePool one = pool_with_answers({"5"}, "5");
  CHECK(select_best(one, phi, vocab) == 0);

  CandidatePool four = pool_with_answers({"5", "6", "7", "8"}, "5");
  CHECK(select_best(four, phi, vocab) == 0);  // exact ties -> lowest index
}

TEST_CASE("self-consistency majority and tie-breaks") {
  CHECK(self_consistency(pool_with_answers({"A", "A", "B", "C"}, "A")) == "A");
  CHECK(self_consistency(pool_with_answers({"D", "B", "C"}, "A")) == "D");
  CHECK(self_consistency(pool_with_answers({"Z"}, "Z")) == "Z");
  // numeric normalization merges "07" and "7"
  CHECK(self_consistency(pool_with_answers({"07", "7", "9"}, "7")) == "07");
}

TEST_CASE("evaluate methods and preconditions") {
  std::vector<CandidatePool> pools = {
      pool_with_answers({"5", "6"}, "5"),
      pool_with_answers({"8", "8", "3"}, "8"),
  };
  CHECK(evaluate(pools, EvalMethod::kFirst) == 1.0);
  CHECK(evaluate(pools, EvalMethod::kSelfConsistency) == 1.0);

  std::vector<CandidatePool> wrong_first = {pool_with_answers({"6", "5"}, "5")};
  CHECK(evaluate(wrong_first, EvalMethod::kFirst) == 0.0);
  CHECK_THROWS_AS((void)evaluate(pools, EvalMethod::kPrmBest), ValidationError);

  auto no_truth = pools;
  no_truth[0].truth.clear();
  CHECK_THROWS_AS((void)evaluate(no_truth, EvalMethod::kFirst), ValidationError);
}

TEST_CASE("evaluate(first) ignores the scorer entirely") {
  const Vocab vocab = synthetic_vocab(kChainModulus);
  Rng rng(8);
  PrmParams a = PrmParams::init(vocab.size(), 4, rng);
  PrmParams b = PrmParams::init(vocab.size(), 4, rng);
  std::vector<CandidatePool> pools = {pool_with_answers({"5", "6"}, "5")};
  CHECK(evaluate(pools, EvalMethod::kFirst, &a, &vocab) ==
        evaluate(pools, EvalMethod::kFirst, &b, &vocab));
}
