#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "iwprm/bilevel.hpp"
#include "iwprm/checkpoint.hpp"
#include "iwprm/errors.hpp"
#include "iwprm/generator.hpp"

using namespace iwprm;
using namespace iwprm::testing;

namespace {

Vocab test_vocab() { return synthetic_vocab(kChainModulus); }

PrmParams tiny_params(uint64_t seed, int64_t width = 3, bool random_head = true) {
  Rng rng(seed);
  PrmParams p = PrmParams::init(test_vocab().size(), width, rng);
  if (random_head) {
    for (auto& w : p.head_w.data) w = rng.uniform(-0.6, 0.6);
    for (auto& b : p.head_b.data) b = rng.uniform(-0.2, 0.2);
  }
  return p;
}

std::vector<ReasoningTrajectory> tiny_batch() {
  return {
      traj("a", "start 4 ; + 3 = ?", {"7"}, {1}),
      traj("b", "start 9 ; * 2 ; - 1 = ?", {"18", "17"}, {1, 1}),
      traj("c", "start 2 ; + 5 ; + 1 = ?", {"9", "10"}, {0, 0}),
  };
}

std::vector<MetaSample> tiny_meta() {
  MetaSample good;
  good.id = "m0";
  good.question = "start 3 ; + 2 = ?";
  good.steps = {"5"};
  good.correct = 1;
  MetaSample bad;
  bad.id = "m1";
  bad.question = "start 8 ; * 3 ; + 1 = ?";
  bad.steps = {"6", "7"};
  bad.correct = 0;
  return {good, bad};
}

WeightStrategy table_strategy(std::span<const ReasoningTrajectory> batch) {
  WeightStrategy s;
  s.kind = StrategyKind::kTable;
  std::vector<std::string> ids;
  for (const auto& t : batch) ids.push_back(t.id);
  s.table = InstanceTable::create(ids);
  return s;
}

RunConfig oracle_config(StrategyKind strategy, HypergradMode mode, OptKind lower) {
  RunConfig cfg;
  cfg.strategy = strategy;
  cfg.hypergrad_mode = mode;
  cfg.lower_opt = lower;
  cfg.lower_lr = 0.05;
  cfg.lower_wd = 0.01;
  cfg.embed_dim = 3;
  return cfg;
}

Optimizer lower_opt_for(const RunConfig& cfg, PrmParams& phi) {
  Optimizer opt = cfg.lower_opt == OptKind::kSgd ? Optimizer::sgd(cfg.lower_lr, cfg.lower_wd)
                                                 : Optimizer::adamw(cfg.lower_lr, cfg.lower_wd);
  const auto params = phi.tensors();
  std::vector<const Tensor*> cparams(params.begin(), params.end());
  opt.init_moments(cparams);
  return opt;
}

// Test-owned oracle: rerun the probe step at perturbed weights and evaluate
// the meta loss, entirely through the public plain-eval API.
double meta_after_probe(const PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                        const std::vector<ReasoningTrajectory>& batch,
                        const std::vector<MetaSample>& meta, const Optimizer& lower_opt) {
  // per-instance unweighted gradients
  std::vector<std::vector<Tensor>> grads;
  std::vector<double> alphas;
  for (const auto& x : batch) {
    Tape t;
    PrmVals pv = register_prm_leaves(t, phi);
    Value one = t.constant_scalar(1.0);
    const ReasoningTrajectory* single[] = {&x};
    Value loss = [&] {
      std::vector<Value> a{one};
      // reuse the public loss by scoring through forward_steps directly
      const auto enc = encode_trajectory(vocab, x.question, x.steps);
      const auto nodes = forward_steps(t, pv, enc);
      Value acc{};
      for (size_t s = 0; s < nodes.size(); ++s) {
        Value z = t.sub(nodes[s].z_plus, nodes[s].z_minus);
        Value ce = t.sub(t.softplus(z), t.mul_scalar(z, x.step_labels[s]));
        acc = acc.ok() ? t.add(acc, ce) : ce;
      }
      return acc;
    }();
    grads.push_back(t.gradients(loss, pv.list()));
    if (strategy.kind == StrategyKind::kTable) {
      alphas.push_back(table_weight(strategy.table, x.id));
    } else {
      alphas.push_back(
          net_weight(strategy.net, last_step_feature(phi, vocab, x.question, x.steps)));
    }
  }

  PrmParams probe = phi;
  const double lr_eff = lower_opt.effective_lr();
  auto params = probe.tensors();
  const auto base = phi.tensors();
  if (lower_opt.kind == OptKind::kSgd) {
    for (size_t k = 0; k < params.size(); ++k) {
      for (int64_t e = 0; e < params[k]->numel(); ++e) {
        double g = 0.0;
        for (size_t i = 0; i < grads.size(); ++i) g += alphas[i] * grads[i][k][e];
        (*params[k])[e] = (*base[k])[e] - lr_eff * (g + lower_opt.weight_decay * (*base[k])[e]);
      }
    }
  } else {
    const uint64_t t = lower_opt.step_count + 1;
    const double bc1 = 1.0 - std::pow(lower_opt.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(lower_opt.beta2, static_cast<double>(t));
    for (size_t k = 0; k < params.size(); ++k) {
      for (int64_t e = 0; e < params[k]->numel(); ++e) {
        double g = 0.0;
        for (size_t i = 0; i < grads.size(); ++i) g += alphas[i] * grads[i][k][e];
        const double m = lower_opt.beta1 * lower_opt.m[k][e] + (1.0 - lower_opt.beta1) * g;
        const double v = lower_opt.beta2 * lower_opt.v[k][e] + (1.0 - lower_opt.beta2) * g * g;
        const double update = (m / bc1) / (std::sqrt(v / bc2) + lower_opt.eps) +
                              lower_opt.weight_decay * (*base[k])[e];
        (*params[k])[e] = (*base[k])[e] - lr_eff * update;
      }
    }
  }
  return meta_loss(probe, vocab, meta);
}

}  // namespace

TEST_CASE("lower loss exact values") {
  const Vocab vocab = test_vocab();
  const auto batch = tiny_batch();

  SUBCASE("all-zero weights annihilate the loss") {
    auto s = table_strategy(batch);
    for (auto& w : s.table.weights) w = 0.0;
    CHECK(lower_loss(tiny_params(2), vocab, s, batch) == 0.0);
  }

  SUBCASE("one step at score one half costs ln 2") {
    PrmParams p = tiny_params(2, 3, /*random_head=*/false);  // zero head: every z is 0
    WeightStrategy uniform;
    const std::vector<ReasoningTrajectory> one = {traj("a", "start 4 ; + 3 = ?", {"7"}, {1})};
    CHECK(lower_loss(p, vocab, uniform, one) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("loss is linear in the weights") {
    auto s = table_strategy(batch);
    Rng rng(4);
    for (auto& w : s.table.weights) w = rng.uniform(0.2, 1.8);
    const PrmParams p = tiny_params(5);
    const double base = lower_loss(p, vocab, s, batch);
    for (auto& w : s.table.weights) w *= 2.0;
    CHECK(lower_loss(p, vocab, s, batch) == doctest::Approx(2.0 * base).epsilon(1e-12));
  }

  SUBCASE("empty batch and missing labels are rejected") {
    WeightStrategy uniform;
    CHECK_THROWS_AS((void)lower_loss(tiny_params(2), vocab, uniform, {}), ValidationError);
    auto broken = tiny_batch();
    broken[0].step_labels.clear();
    CHECK_THROWS_AS((void)lower_loss(tiny_params(2), vocab, uniform, broken), ValidationError);
  }
}

TEST_CASE("meta loss exact values") {
  const Vocab vocab = test_vocab();
  const auto meta = tiny_meta();

  SUBCASE("zero logits give one-quarter per sample") {
    const PrmParams p = tiny_params(2, 3, /*random_head=*/false);
    CHECK(meta_loss(p, vocab, meta) == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("saturated logits drive the loss to zero") {
    PrmParams p = tiny_params(2, 3, false);
    p.head_b[0] = 60.0;   // "+" logit huge
    p.head_b[1] = -60.0;  // "-" logit tiny... selected-token target still 1
    std::vector<MetaSample> pos = {meta[0]};
    CHECK(meta_loss(p, vocab, pos) < 1e-20);
  }

  SUBCASE("single-step aggregation equals that step's selected logit") {
    const PrmParams p = tiny_params(8);
    const MetaSample& m = meta[0];  // one step, r = 1
    const auto logits =
        step_logits(p, encode_context(vocab, traj("t", m.question, m.steps), 1));
    const double sig = 1.0 / (1.0 + std::exp(-logits.z_plus));
    const double want = (sig - 1.0) * (sig - 1.0);
    std::vector<MetaSample> one = {m};
    CHECK(meta_loss(p, vocab, one) == doctest::Approx(want).epsilon(1e-12));
  }

  SUBCASE("per-sample contributions stay in [0,1)") {
    Rng rng(6);
    for (int i = 0; i < 50; ++i) {
      const PrmParams p = tiny_params(100 + static_cast<uint64_t>(i), 4);
      std::vector<MetaSample> one = {meta[static_cast<size_t>(rng.uniform_int(0, 1))]};
      const double l = meta_loss(p, vocab, one);
      CHECK(l >= 0.0);
      CHECK(l < 1.0);
    }
  }

  SUBCASE("literal mode regresses the plus probability onto r") {
    const PrmParams p = tiny_params(2, 3, false);
    std::vector<MetaSample> neg = {meta[1]};        // r = 0
    CHECK(meta_loss(p, vocab, neg, true) == doctest::Approx(0.25));  // (0.5-0)^2
    std::vector<MetaSample> pos = {meta[0]};
    CHECK(meta_loss(p, vocab, pos, true) == doctest::Approx(0.25));  // (0.5-1)^2
  }
}

TEST_CASE("lower step semantics") {
  const Vocab vocab = test_vocab();
  const auto batch = tiny_batch();

  SUBCASE("zero loss leaves parameters untouched") {
    auto s = table_strategy(batch);
    for (auto& w : s.table.weights) w = 0.0;
    PrmParams p = tiny_params(3);
    const PrmParams before = p;
    Optimizer opt = Optimizer::sgd(0.1, 0.0);
    lower_step(p, vocab, s, batch, opt);
    for (size_t i = 0; i < p.tensors().size(); ++i) {
      CHECK(p.tensors()[i]->data == before.tensors()[i]->data);
    }
  }

  SUBCASE("a small SGD step decreases the loss on the same batch") {
    WeightStrategy uniform;
    PrmParams p = tiny_params(7);
    const double before = lower_loss(p, vocab, uniform, batch);
    Optimizer opt = Optimizer::sgd(1e-3, 0.0);
    lower_step(p, vocab, uniform, batch, opt);
    CHECK(lower_loss(p, vocab, uniform, batch) < before);
  }

  SUBCASE("strategy state is bit-identical before and after") {
    auto s = table_strategy(batch);
    const auto weights_before = s.table.weights;
    PrmParams p = tiny_params(7);
    Optimizer opt = Optimizer::sgd(1e-2, 0.0);
    lower_step(p, vocab, s, batch, opt);
    CHECK(s.table.weights == weights_before);
  }
}

TEST_CASE("proxy hypergradient matches the closed form it claims") {
  const Vocab vocab = test_vocab();
  const auto batch = tiny_batch();
  const auto meta = tiny_meta();
  auto strategy = table_strategy(batch);
  strategy.table.weights = {0.8, 1.2, 1.0};

  RunConfig cfg = oracle_config(StrategyKind::kTable, HypergradMode::kSgdProxy, OptKind::kSgd);
  PrmParams phi = tiny_params(11);
  Optimizer opt = lower_opt_for(cfg, phi);

  const auto hg = hypergrad(phi, vocab, strategy, batch, meta, cfg, opt);
  REQUIRE(hg.table.size() == batch.size());

  // Independently recompute -lr <g_x, g_meta>: per-instance gradients, an
  // SGD probe step, then the meta gradient at the probed parameters.
  PrmParams probe = phi;
  std::vector<std::vector<Tensor>> inst_grads;
  for (const auto& x : batch) {
    Tape t;
    PrmVals pv = register_prm_leaves(t, phi);
    const auto enc = encode_trajectory(vocab, x.question, x.steps);
    const auto nodes = forward_steps(t, pv, enc);
    Value acc{};
    for (size_t s = 0; s < nodes.size(); ++s) {
      Value z = t.sub(nodes[s].z_plus, nodes[s].z_minus);
      Value ce = t.sub(t.softplus(z), t.mul_scalar(z, x.step_labels[s]));
      acc = acc.ok() ? t.add(acc, ce) : ce;
    }
    inst_grads.push_back(t.gradients(acc, pv.list()));
  }
  auto params = probe.tensors();
  const auto base = phi.tensors();
  for (size_t k = 0; k < params.size(); ++k) {
    for (int64_t e = 0; e < params[k]->numel(); ++e) {
      double g = 0.0;
      for (size_t i = 0; i < batch.size(); ++i) {
        g += strategy.table.weights[i] * inst_grads[i][k][e];
      }
      (*params[k])[e] = (*base[k])[e] - cfg.lower_lr * (g + cfg.lower_wd * (*base[k])[e]);
    }
  }
  Tape tm;
  PrmVals pvm = register_prm_leaves(tm, probe);
  std::vector<const MetaSample*> mp;
  for (const auto& m : meta) mp.push_back(&m);
  Value meta_node = [&] {
    Value total{};
    for (const auto* m : mp) {
      const auto enc = encode_trajectory(vocab, m->question, m->steps);
      const auto nodes = forward_steps(tm, pvm, enc);
      Value acc{};
      for (const auto& n : nodes) {
        Value z = m->correct == 1 ? n.z_plus : n.z_minus;
        acc = acc.ok() ? tm.add(acc, z) : z;
      }
      Value a = tm.mul_scalar(acc, 1.0 / static_cast<double>(nodes.size()));
      Value d = tm.add_scalar(tm.sigmoid(a), -1.0);
      Value sq = tm.mul(d, d);
      total = total.ok() ? tm.add(total, sq) : sq;
    }
    return tm.mul_scalar(total, 1.0 / static_cast<double>(mp.size()));
  }();
  const auto g_meta = tm.gradients(meta_node, pvm.list());

  for (size_t i = 0; i < batch.size(); ++i) {
    double dot = 0.0;
    for (size_t k = 0; k < g_meta.size(); ++k) {
      for (int64_t e = 0; e < g_meta[k].numel(); ++e) dot += inst_grads[i][k][e] * g_meta[k][e];
    }
    const double want = -cfg.lower_lr * dot;
    CHECK(rel_err(hg.table[i].second, want) <= 1e-12);
  }
}

TEST_CASE("aligned lower and meta content produce a negative hypergradient") {
  const Vocab vocab = test_vocab();
  // zero head: per-step gradients live in head space and share hidden states,
  // so identical content aligns g_x with g_meta exactly
  PrmParams phi = tiny_params(13, 4, /*random_head=*/false);
  const std::vector<ReasoningTrajectory> batch = {
      traj("a", "start 3 ; + 2 = ?", {"5"}, {1})};
  MetaSample m;
  m.id = "m";
  m.question = "start 3 ; + 2 = ?";
  m.steps = {"5"};
  m.correct = 1;
  const std::vector<MetaSample> meta = {m};

  auto strategy = table_strategy(batch);
  RunConfig cfg = oracle_config(StrategyKind::kTable, HypergradMode::kSgdProxy, OptKind::kSgd);
  cfg.lower_wd = 0.0;
  PrmParams phi2 = phi;
  Optimizer opt = lower_opt_for(cfg, phi2);

  const auto hg = hypergrad(phi, vocab, strategy, batch, meta, cfg, opt);
  REQUIRE(hg.table.size() == 1);
  CHECK(hg.table[0].second < 0.0);
}

TEST_CASE("exact unroll equals the SGD closed form to 1e-10") {
  const Vocab vocab = test_vocab();
  const auto batch = tiny_batch();
  const auto meta = tiny_meta();
  auto strategy = table_strategy(batch);
  strategy.table.weights = {1.3, 0.6, 0.9};

  PrmParams phi = tiny_params(17);
  RunConfig exact_cfg = oracle_config(StrategyKind::kTable, HypergradMode::kExactUnroll, OptKind::kSgd);
  RunConfig proxy_cfg = exact_cfg;
  proxy_cfg.hypergrad_mode = HypergradMode::kSgdProxy;
  Optimizer opt = lower_opt_for(exact_cfg, phi);

  const auto exact = hypergrad(phi, vocab, strategy, batch, meta, exact_cfg, opt);
  const auto proxy = hypergrad(phi, vocab, strategy, batch, meta, proxy_cfg, opt);
  REQUIRE(exact.table.size() == proxy.table.size());
  for (size_t i = 0; i < exact.table.size(); ++i) {
    CHECK(exact.table[i].first == proxy.table[i].first);
    CHECK(rel_err(exact.table[i].second, proxy.table[i].second) <= 1e-10);
  }
  CHECK(rel_err(exact.meta_loss, proxy.meta_loss) <= 1e-12);
}

TEST_CASE("exact unroll matches finite differences through the two-level pipeline") {
  const Vocab vocab = test_vocab();
  const auto batch = tiny_batch();
  const auto meta = tiny_meta();

  for (OptKind lower : {OptKind::kSgd, OptKind::kAdamW}) {
    CAPTURE(static_cast<int>(lower));
    auto strategy = table_strategy(batch);
    strategy.table.weights = {1.1, 0.7, 1.4};
    PrmParams phi = tiny_params(19);
    RunConfig cfg = oracle_config(StrategyKind::kTable, HypergradMode::kExactUnroll, lower);
    Optimizer opt = lower_opt_for(cfg, phi);
    if (lower == OptKind::kAdamW) {
      // non-trivial moments: take two real steps first
      WeightStrategy uniform;
      lower_step(phi, vocab, uniform, batch, opt);
      lower_step(phi, vocab, uniform, batch, opt);
    }

    const auto hg = hypergrad(phi, vocab, strategy, batch, meta, cfg, opt);

    for (size_t i = 0; i < batch.size(); ++i) {
      const double h = 1e-5;
      auto at = [&](double w) {
        auto s2 = strategy;
        s2.table.weights[i] = w;
        return meta_after_probe(phi, vocab, s2, batch, meta, opt);
      };
      const double w0 = strategy.table.weights[i];
      const double fd = (at(w0 + h) - at(w0 - h)) / (2.0 * h);
      CHECK(rel_err(hg.table[i].second, fd, 1e-8) <= 1e-4);
    }
  }
}

TEST_CASE("net-strategy hypergradient matches finite differences over psi") {
  const Vocab vocab = test_vocab();
  const auto batch = tiny_batch();
  const auto meta = tiny_meta();

  WeightStrategy strategy;
  strategy.kind = StrategyKind::kNet;
  Rng rng(23);
  strategy.net = InstanceNet::init(3, 4, rng);

  PrmParams phi = tiny_params(29);
  RunConfig cfg = oracle_config(StrategyKind::kNet, HypergradMode::kExactUnroll, OptKind::kSgd);
  Optimizer opt = lower_opt_for(cfg, phi);

  const auto hg = hypergrad(phi, vocab, strategy, batch, meta, cfg, opt);
  REQUIRE(hg.net.size() == 4);

  // FD over a handful of psi coordinates
  const double h = 1e-5;
  auto tensors = strategy.net.tensors();
  for (size_t k = 0; k < tensors.size(); ++k) {
    const int64_t probe_count = std::min<int64_t>(3, tensors[k]->numel());
    for (int64_t e = 0; e < probe_count; ++e) {
      auto at = [&](double v) {
        auto s2 = strategy;
        (*s2.net.tensors()[k])[e] = v;
        return meta_after_probe(phi, vocab, s2, batch, meta, opt);
      };
      const double v0 = (*tensors[k])[e];
      const double fd = (at(v0 + h) - at(v0 - h)) / (2.0 * h);
      CHECK(rel_err(hg.net[k][e], fd, 1e-8) <= 1e-4);
    }
  }
}

TEST_CASE("hypergrad rejects invalid mode and strategy combinations") {
  const Vocab vocab = test_vocab();
  const auto batch = tiny_batch();
  const auto meta = tiny_meta();
  PrmParams phi = tiny_params(31);

  WeightStrategy uniform;
  RunConfig cfg = oracle_config(StrategyKind::kUniform, HypergradMode::kExactUnroll, OptKind::kSgd);
  Optimizer opt = lower_opt_for(cfg, phi);
  CHECK_THROWS_AS((void)hypergrad(phi, vocab, uniform, batch, meta, cfg, opt), ValidationError);

  auto strategy = table_strategy(batch);
  RunConfig bad = oracle_config(StrategyKind::kTable, HypergradMode::kSgdProxy, OptKind::kAdamW);
  Optimizer adamw_opt = lower_opt_for(bad, phi);
  CHECK_THROWS_AS((void)hypergrad(phi, vocab, strategy, batch, meta, bad, adamw_opt),
                  ValidationError);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("cold start runs ceil(N/b) steps and separates held-out classes") {
  const Vocab vocab = test_vocab();
  GenSpec spec;
  spec.seed = 5;
  spec.n_train = 210;
  spec.n_meta = 0;
  spec.n_eval_pools = 0;
  spec.label_noise = 0.0;
  spec.trivial_frac = 0.0;
  const auto data = generate(spec);

  RunConfig cfg;
  cfg.seed = 5;
  cfg.embed_dim = 16;
  cfg.lower_lr = 5e-3;
  cfg.lower_wd = 0.0;
  cfg.lower_batch = 8;
  const std::span<const ReasoningTrajectory> all(data.train);
  const auto sft = all.subspan(0, 160);
  const auto held = all.subspan(160);

  PrmParams phi = init_prm(cfg, vocab);
  uint64_t steps = 0;
  phi = cold_start(std::move(phi), vocab, sft, cfg, &steps);
  CHECK(steps == 20);  // ceil(160/8)

  double pos_sum = 0.0, neg_sum = 0.0;
  size_t pos_n = 0, neg_n = 0;
  for (const auto& t : held) {
    const auto scores = score_trajectory(phi, vocab, t);
    for (size_t i = 0; i < scores.size(); ++i) {
      if (t.step_labels[i] == 1) {
        pos_sum += scores[i];
        ++pos_n;
      } else {
        neg_sum += scores[i];
        ++neg_n;
      }
    }
  }
  REQUIRE(pos_n > 0);
  REQUIRE(neg_n > 0);
  CHECK(pos_sum / static_cast<double>(pos_n) > neg_sum / static_cast<double>(neg_n));

  // odd remainder: 33 instances at batch 8 -> 5 steps
  uint64_t steps2 = 0;
  PrmParams phi2 = init_prm(cfg, vocab);
  (void)cold_start(std::move(phi2), vocab, all.subspan(0, 33), cfg, &steps2);
  CHECK(steps2 == 5);
}
