#include <doctest.h>

#include "helpers.hpp"
#include "iwprm/errors.hpp"
#include "iwprm/generator.hpp"
#include "iwprm/report.hpp"

using namespace iwprm;
using namespace iwprm::testing;

TEST_CASE("roc_auc on separable, anti-separable and constant scores") {
  const double perfect[] = {0.9, 0.8, 0.1, 0.2};
  const int labels[] = {1, 1, 0, 0};
  CHECK(roc_auc(perfect, labels) == 1.0);

  const double inverted[] = {0.1, 0.2, 0.9, 0.8};
  CHECK(roc_auc(inverted, labels) == 0.0);

  const double constant[] = {0.5, 0.5, 0.5, 0.5};
  CHECK(roc_auc(constant, labels) == 0.5);

  const double mixed[] = {0.9, 0.3, 0.5, 0.2};
  CHECK(roc_auc(mixed, labels) == doctest::Approx(0.75));

  CHECK_THROWS_AS((void)roc_auc({}, {}), ValidationError);
  const double one_class_scores[] = {0.4, 0.6};
  const int one_class[] = {1, 1};
  CHECK_THROWS_AS((void)roc_auc(one_class_scores, one_class), ValidationError);
}

TEST_CASE("weights report on a fresh table is all ones with chance-level AUC") {
  GenSpec spec;
  spec.seed = 3;
  spec.n_train = 40;
  spec.n_meta = 0;
  spec.n_eval_pools = 0;
  spec.label_noise = 0.3;
  const auto data = generate(spec);

  RunConfig cfg;
  cfg.strategy = StrategyKind::kTable;
  cfg.embed_dim = 4;
  const Vocab vocab = synthetic_vocab(kChainModulus);
  const Checkpoint ck = make_initial_checkpoint(cfg, init_prm(cfg, vocab), data.train, 0);

  const auto report = weights_report(ck, vocab, data.train);
  REQUIRE(report.rows.size() == data.train.size());
  for (const auto& row : report.rows) CHECK(row.weight == 1.0);
  CHECK(report.has_provenance);
  CHECK(report.auc == 0.5);
  CHECK(report.clean_mean == 1.0);
  CHECK(report.noisy_mean == 1.0);
}

TEST_CASE("weights report omits the summary without provenance flags") {
  GenSpec spec;
  spec.seed = 4;
  spec.n_train = 20;
  spec.n_meta = 0;
  spec.n_eval_pools = 0;
  const auto data = generate(spec);
  auto train = data.train;
  for (auto& t : train) {
    t.noisy.reset();
    t.trivial.reset();
  }

  RunConfig cfg;
  cfg.strategy = StrategyKind::kUniform;
  cfg.embed_dim = 4;
  const Vocab vocab = synthetic_vocab(kChainModulus);
  const Checkpoint ck = make_initial_checkpoint(cfg, init_prm(cfg, vocab), train, 0);
  const auto report = weights_report(ck, vocab, train);
  CHECK_FALSE(report.has_provenance);
  CHECK(report.rows.size() == train.size());
}
