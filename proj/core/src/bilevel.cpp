#include "iwprm/bilevel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iwprm/errors.hpp"

namespace iwprm {
namespace {

constexpr uint64_t kTagTrainLoop = 11;
constexpr uint64_t kTagColdStart = 12;
constexpr uint64_t kTagNetInit = 13;
constexpr uint64_t kTagPhiInit = 14;

using TrajPtrs = std::span<const ReasoningTrajectory* const>;
using MetaPtrs = std::span<const MetaSample* const>;

std::vector<const ReasoningTrajectory*> to_ptrs(std::span<const ReasoningTrajectory> v) {
  std::vector<const ReasoningTrajectory*> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(&x);
  return out;
}

std::vector<const MetaSample*> to_ptrs(std::span<const MetaSample> v) {
  std::vector<const MetaSample*> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(&x);
  return out;
}

// sum_x alpha_x * sum_i [softplus(z_i) - p_i * z_i], z = z_plus - z_minus.
Value taped_lower_loss(Tape& t, const PrmVals& pv, std::span<const Value> alphas, TrajPtrs batch,
                       const Vocab& vocab) {
  if (batch.empty()) throw ValidationError("lower_loss: empty batch");
  Value total{};
  for (size_t i = 0; i < batch.size(); ++i) {
    const ReasoningTrajectory& x = *batch[i];
    if (x.step_labels.size() != x.steps.size() || x.steps.empty()) {
      throw ValidationError("lower_loss: instance '" + x.id + "' lacks step labels");
    }
    const auto enc = encode_trajectory(vocab, x.question, x.steps);
    const auto nodes = forward_steps(t, pv, enc);
    Value inst{};
    for (size_t s = 0; s < nodes.size(); ++s) {
      Value z = t.sub(nodes[s].z_plus, nodes[s].z_minus);
      Value ce = t.sub(t.softplus(z), t.mul_scalar(z, static_cast<double>(x.step_labels[s])));
      inst = inst.ok() ? t.add(inst, ce) : ce;
    }
    Value weighted = t.mul(alphas[i], inst);
    total = total.ok() ? t.add(total, weighted) : weighted;
  }
  return total;
}

// mean_x (sigma(A_x) - target_x)^2, A = mean selected step logit.
Value taped_meta_loss(Tape& t, const PrmVals& pv, MetaPtrs batch, const Vocab& vocab,
                      bool eq2_literal) {
  if (batch.empty()) throw ValidationError("meta_loss: empty batch");
  Value total{};
  for (const MetaSample* mp : batch) {
    const MetaSample& m = *mp;
    const auto enc = encode_trajectory(vocab, m.question, m.steps);
    const auto nodes = forward_steps(t, pv, enc);
    Value acc{};
    for (const auto& n : nodes) {
      Value z = (eq2_literal || m.correct == 1) ? n.z_plus : n.z_minus;
      acc = acc.ok() ? t.add(acc, z) : z;
    }
    Value aggregated = t.mul_scalar(acc, 1.0 / static_cast<double>(nodes.size()));
    Value score = t.sigmoid(aggregated);
    const double target = eq2_literal ? static_cast<double>(m.correct) : 1.0;
    Value diff = t.add_scalar(score, -target);
    Value sq = t.mul(diff, diff);
    total = total.ok() ? t.add(total, sq) : sq;
  }
  return t.mul_scalar(total, 1.0 / static_cast<double>(batch.size()));
}

double instance_weight(const PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                       const ReasoningTrajectory& x) {
  switch (strategy.kind) {
    case StrategyKind::kUniform:
      return 1.0;
    case StrategyKind::kTable:
      return table_weight(strategy.table, x.id);
    case StrategyKind::kNet: {
      const Tensor f = last_step_feature(phi, vocab, x.question, x.steps);
      return net_weight(strategy.net, f);
    }
  }
  throw ValidationError("bad strategy kind");
}

double lower_loss_ptrs(const PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                       TrajPtrs batch) {
  Tape t;
  PrmVals pv = register_prm_leaves(t, phi);
  std::vector<Value> alphas;
  alphas.reserve(batch.size());
  for (const auto* x : batch) {
    alphas.push_back(t.constant_scalar(instance_weight(phi, vocab, strategy, *x)));
  }
  return t.scalar_value(taped_lower_loss(t, pv, alphas, batch, vocab));
}

double meta_loss_ptrs(const PrmParams& phi, const Vocab& vocab, MetaPtrs batch,
                      bool eq2_literal) {
  Tape t;
  PrmVals pv = register_prm_leaves(t, phi);
  return t.scalar_value(taped_meta_loss(t, pv, batch, vocab, eq2_literal));
}

void lower_step_ptrs(PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                     TrajPtrs batch, Optimizer& opt) {
  Tape t;
  PrmVals pv = register_prm_leaves(t, phi);
  std::vector<Value> alphas;
  alphas.reserve(batch.size());
  for (const auto* x : batch) {
    alphas.push_back(t.constant_scalar(instance_weight(phi, vocab, strategy, *x)));
  }
  Value loss = taped_lower_loss(t, pv, alphas, batch, vocab);
  const auto leaves = pv.list();
  const auto grads = t.gradients(loss, leaves);
  const auto params = phi.tensors();
  opt.step(params, grads);
}

double dot_all(std::span<const Tensor> a, std::span<const Tensor> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    for (int64_t k = 0; k < a[i].numel(); ++k) acc += a[i][k] * b[i][k];
  }
  return acc;
}

HyperGrads hypergrad_exact(const PrmParams& phi, const Vocab& vocab,
                           const WeightStrategy& strategy, TrajPtrs lower_batch,
                           MetaPtrs meta_batch, const RunConfig& cfg,
                           const Optimizer& lower_opt) {
  Tape t;
  t.reserve(1 << 16);
  PrmVals pv = register_prm_leaves(t, phi);

  std::vector<Value> alphas;
  std::vector<size_t> positions;
  NetVals nv{};
  if (strategy.kind == StrategyKind::kNet) {
    nv = register_net_leaves(t, strategy.net);
  }
  for (const auto* x : lower_batch) {
    if (strategy.kind == StrategyKind::kTable) {
      const size_t pos = strategy.table.position(x->id);
      positions.push_back(pos);
      alphas.push_back(t.leaf(Tensor::scalar(strategy.table.weights[pos])));
    } else {
      const Tensor f = last_step_feature(phi, vocab, x->question, x->steps);
      alphas.push_back(net_weight_node(t, nv, f));
    }
  }

  Value lower = taped_lower_loss(t, pv, alphas, lower_batch, vocab);
  const auto phi_leaves = pv.list();
  const auto lower_grads = t.gradients_taped(lower, phi_leaves);
  const auto probed = taped_step(t, lower_opt, phi_leaves, lower_grads);
  const PrmVals pv_probe = PrmVals::from_list(probed);
  Value meta = taped_meta_loss(t, pv_probe, meta_batch, vocab, cfg.eq2_literal);

  HyperGrads hg;
  hg.lower_loss = t.scalar_value(lower);
  hg.meta_loss = t.scalar_value(meta);
  for (Value a : alphas) hg.batch_weights.push_back(t.scalar_value(a));

  if (strategy.kind == StrategyKind::kTable) {
    const auto grads = t.gradients(meta, alphas);
    for (size_t i = 0; i < alphas.size(); ++i) {
      hg.table.emplace_back(positions[i], grads[i].item());
    }
  } else {
    const auto psi = nv.list();
    hg.net = t.gradients(meta, psi);
  }
  return hg;
}

HyperGrads hypergrad_proxy(const PrmParams& phi, const Vocab& vocab,
                           const WeightStrategy& strategy, TrajPtrs lower_batch,
                           MetaPtrs meta_batch, const RunConfig& cfg,
                           const Optimizer& lower_opt) {
  const double lr_eff = lower_opt.effective_lr();

  // Per-instance unweighted lower gradients at phi.
  std::vector<std::vector<Tensor>> inst_grads;
  std::vector<double> inst_losses;
  std::vector<double> alpha_vals;
  std::vector<Tensor> features;
  inst_grads.reserve(lower_batch.size());
  for (const auto* x : lower_batch) {
    Tape tx;
    PrmVals pvx = register_prm_leaves(tx, phi);
    const Value one = tx.constant_scalar(1.0);
    const ReasoningTrajectory* single[] = {x};
    Value lx = taped_lower_loss(tx, pvx, std::span<const Value>(&one, 1), single, vocab);
    inst_losses.push_back(tx.scalar_value(lx));
    const auto leaves = pvx.list();
    inst_grads.push_back(tx.gradients(lx, leaves));
    if (strategy.kind == StrategyKind::kNet) {
      features.push_back(last_step_feature(phi, vocab, x->question, x->steps));
      alpha_vals.push_back(net_weight(strategy.net, features.back()));
    } else {
      alpha_vals.push_back(table_weight(strategy.table, x->id));
    }
  }

  // Plain SGD probe step: p' = p - lr_eff * (sum alpha_i g_i + wd * p).
  PrmParams probe = phi;
  {
    auto params = probe.tensors();
    const auto base = phi.tensors();
    for (size_t k = 0; k < params.size(); ++k) {
      for (int64_t e = 0; e < params[k]->numel(); ++e) {
        double g = 0.0;
        for (size_t i = 0; i < inst_grads.size(); ++i) g += alpha_vals[i] * inst_grads[i][k][e];
        (*params[k])[e] =
            (*base[k])[e] - lr_eff * (g + lower_opt.weight_decay * (*base[k])[e]);
      }
    }
  }

  // Meta gradient at the probed parameters.
  Tape tm;
  PrmVals pvm = register_prm_leaves(tm, probe);
  Value meta = taped_meta_loss(tm, pvm, meta_batch, vocab, cfg.eq2_literal);
  const auto meta_leaves = pvm.list();
  const auto meta_grads = tm.gradients(meta, meta_leaves);

  HyperGrads hg;
  hg.meta_loss = tm.scalar_value(meta);
  hg.batch_weights = alpha_vals;
  hg.lower_loss = 0.0;
  for (size_t i = 0; i < lower_batch.size(); ++i) {
    hg.lower_loss += alpha_vals[i] * inst_losses[i];
  }

  std::vector<double> coeffs(lower_batch.size());
  for (size_t i = 0; i < lower_batch.size(); ++i) {
    coeffs[i] = -lr_eff * dot_all(inst_grads[i], meta_grads);
  }

  if (strategy.kind == StrategyKind::kTable) {
    for (size_t i = 0; i < lower_batch.size(); ++i) {
      hg.table.emplace_back(strategy.table.position(lower_batch[i]->id), coeffs[i]);
    }
  } else {
    // Chain the scalar coefficients through d alpha_x / d psi.
    Tape tn;
    NetVals nv = register_net_leaves(tn, strategy.net);
    Value pseudo{};
    for (size_t i = 0; i < lower_batch.size(); ++i) {
      Value term = tn.mul_scalar(net_weight_node(tn, nv, features[i]), coeffs[i]);
      pseudo = pseudo.ok() ? tn.add(pseudo, term) : term;
    }
    const auto psi = nv.list();
    hg.net = tn.gradients(pseudo, psi);
  }
  return hg;
}

HyperGrads hypergrad_ptrs(const PrmParams& phi, const Vocab& vocab,
                          const WeightStrategy& strategy, TrajPtrs lower_batch,
                          MetaPtrs meta_batch, const RunConfig& cfg,
                          const Optimizer& lower_opt) {
  if (strategy.kind == StrategyKind::kUniform) {
    throw ValidationError("hypergrad: uniform strategy has no weight parameters");
  }
  if (cfg.hypergrad_mode == HypergradMode::kSgdProxy && lower_opt.kind != OptKind::kSgd) {
    throw ValidationError("hypergrad: sgd-proxy requires an SGD lower optimizer");
  }
  if (cfg.hypergrad_mode == HypergradMode::kExactUnroll) {
    return hypergrad_exact(phi, vocab, strategy, lower_batch, meta_batch, cfg, lower_opt);
  }
  return hypergrad_proxy(phi, vocab, strategy, lower_batch, meta_batch, cfg, lower_opt);
}

void fill_weight_stats(MetricsRow& row, const WeightStrategy& strat,
                       std::span<const ReasoningTrajectory> train_set, TrajPtrs batch,
                       std::span<const double> batch_weights) {
  struct Acc {
    double sum = 0.0, sum_sq = 0.0;
    double clean = 0.0, noisy = 0.0;
    int64_t n = 0, n_clean = 0, n_noisy = 0;
    void add(double w, const std::optional<bool>& noisy_flag) {
      sum += w;
      sum_sq += w * w;
      ++n;
      if (noisy_flag.has_value()) {
        if (*noisy_flag) {
          noisy += w;
          ++n_noisy;
        } else {
          clean += w;
          ++n_clean;
        }
      }
    }
  } acc;

  switch (strat.kind) {
    case StrategyKind::kUniform:
      for (const auto* x : batch) acc.add(1.0, x->noisy);
      break;
    case StrategyKind::kTable:
      for (const auto& x : train_set) {
        acc.add(strat.table.weights[strat.table.position(x.id)], x.noisy);
      }
      break;
    case StrategyKind::kNet:
      for (size_t i = 0; i < batch.size(); ++i) acc.add(batch_weights[i], batch[i]->noisy);
      break;
  }

  row.mean_weight = acc.n > 0 ? acc.sum / static_cast<double>(acc.n) : 1.0;
  const double var =
      acc.n > 0 ? std::max(0.0, acc.sum_sq / static_cast<double>(acc.n) -
                                    row.mean_weight * row.mean_weight)
                : 0.0;
  row.weight_std = std::sqrt(var);
  row.clean_mean_weight =
      acc.n_clean > 0 ? acc.clean / static_cast<double>(acc.n_clean) : row.mean_weight;
  row.noisy_mean_weight =
      acc.n_noisy > 0 ? acc.noisy / static_cast<double>(acc.n_noisy) : row.mean_weight;
}

bool roughly_balanced(std::span<const ReasoningTrajectory> train,
                      std::span<const MetaSample> meta) {
  int64_t tp = 0, tn = 0;
  for (const auto& x : train) {
    size_t ones = 0;
    for (int p : x.step_labels) ones += static_cast<size_t>(p);
    (2 * ones >= x.step_labels.size() ? tp : tn) += 1;
  }
  int64_t mp = 0, mn = 0;
  for (const auto& m : meta) (m.correct == 1 ? mp : mn) += 1;
  return std::llabs(tp - tn) <= 1 && std::llabs(mp - mn) <= 1;
}

}  // namespace

const char* hypergrad_mode_name(HypergradMode m) {
  return m == HypergradMode::kExactUnroll ? "exact-unroll" : "sgd-proxy";
}

HypergradMode hypergrad_mode_from_name(const std::string& name) {
  if (name == "exact-unroll") return HypergradMode::kExactUnroll;
  if (name == "sgd-proxy") return HypergradMode::kSgdProxy;
  throw ValidationError("unknown hypergrad mode '" + name +
                        "' (expected exact-unroll|sgd-proxy)");
}

double RunConfig::resolved_upper_lr() const {
  if (upper_lr > 0.0) return upper_lr;
  return strategy == StrategyKind::kNet ? 5e-4 : 5e-3;
}

void RunConfig::validate() const {
  if (unroll_steps != 1) {
    throw ValidationError("config: unroll_steps must be 1");
  }
  if (iterations == 0 || iterations > 100000) {
    throw ValidationError("config: iterations must be in [1, 100000]");
  }
  if (stop_after > iterations) {
    throw ValidationError("config: stop_after beyond iterations");
  }
  if (lower_lr <= 0.0 || resolved_upper_lr() <= 0.0) {
    throw ValidationError("config: learning rates must be positive");
  }
  if (lower_wd < 0.0 || upper_wd < 0.0) {
    throw ValidationError("config: weight decay must be non-negative");
  }
  if (warmup_frac < 0.0 || warmup_frac >= 1.0) {
    throw ValidationError("config: warmup_frac must lie in [0,1)");
  }
  if (lower_batch < 1 || meta_batch < 1) {
    throw ValidationError("config: batch sizes must be >= 1");
  }
  if (clip_lo >= clip_hi) {
    throw ValidationError("config: clip_lo must be below clip_hi");
  }
  if (embed_dim < 1 || net_hidden < 1) {
    throw ValidationError("config: embed_dim and net_hidden must be >= 1");
  }
  if (hypergrad_mode == HypergradMode::kSgdProxy && lower_opt != OptKind::kSgd) {
    throw ValidationError("config: hypergrad mode sgd-proxy requires an SGD lower optimizer");
  }
}

double lower_loss(const PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                  std::span<const ReasoningTrajectory> batch) {
  const auto ptrs = to_ptrs(batch);
  return lower_loss_ptrs(phi, vocab, strategy, ptrs);
}

double meta_loss(const PrmParams& phi, const Vocab& vocab, std::span<const MetaSample> batch,
                 bool eq2_literal) {
  const auto ptrs = to_ptrs(batch);
  return meta_loss_ptrs(phi, vocab, ptrs, eq2_literal);
}

void lower_step(PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                std::span<const ReasoningTrajectory> batch, Optimizer& opt) {
  const auto ptrs = to_ptrs(batch);
  lower_step_ptrs(phi, vocab, strategy, ptrs, opt);
}

HyperGrads hypergrad(const PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                     std::span<const ReasoningTrajectory> lower_batch,
                     std::span<const MetaSample> meta_batch, const RunConfig& cfg,
                     const Optimizer& lower_opt) {
  const auto lp = to_ptrs(lower_batch);
  const auto mp = to_ptrs(meta_batch);
  return hypergrad_ptrs(phi, vocab, strategy, lp, mp, cfg, lower_opt);
}

PrmParams cold_start(PrmParams phi, const Vocab& vocab,
                     std::span<const ReasoningTrajectory> sft_set, const RunConfig& cfg,
                     uint64_t* steps_out) {
  if (sft_set.empty()) throw ValidationError("cold_start: empty SFT set");
  const uint64_t n = sft_set.size();
  const auto batch = static_cast<uint64_t>(cfg.lower_batch);
  const uint64_t steps = (n + batch - 1) / batch;
  if (steps_out) *steps_out = steps;

  Optimizer opt = cfg.lower_opt == OptKind::kSgd
                      ? Optimizer::sgd(cfg.lower_lr, cfg.lower_wd)
                      : Optimizer::adamw(cfg.lower_lr, cfg.lower_wd);
  opt.schedule = Schedule{steps, cfg.warmup_frac};
  {
    const auto params = phi.tensors();
    std::vector<const Tensor*> cparams(params.begin(), params.end());
    opt.init_moments(cparams);
  }

  Rng rng(mix_seed(cfg.seed, kTagColdStart, 0));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  rng.shuffle(order);

  const WeightStrategy uniform;  // all weights 1
  for (uint64_t s = 0; s < steps; ++s) {
    std::vector<const ReasoningTrajectory*> ptrs;
    for (uint64_t k = s * batch; k < std::min(n, (s + 1) * batch); ++k) {
      ptrs.push_back(&sft_set[order[k]]);
    }
    lower_step_ptrs(phi, vocab, uniform, ptrs, opt);
  }
  return phi;
}

PrmParams init_prm(const RunConfig& cfg, const Vocab& vocab) {
  Rng rng(mix_seed(cfg.seed, kTagPhiInit, 0));
  return PrmParams::init(vocab.size(), cfg.embed_dim, rng);
}

Checkpoint make_initial_checkpoint(const RunConfig& cfg, const PrmParams& phi,
                                   std::span<const ReasoningTrajectory> train_set,
                                   uint64_t config_hash) {
  cfg.validate();
  Checkpoint ck;
  ck.config_hash = config_hash;
  ck.seed = cfg.seed;
  ck.iteration = 0;
  ck.rng_state = Rng(mix_seed(cfg.seed, kTagTrainLoop, 0)).state();
  ck.phi = phi;

  ck.lower = cfg.lower_opt == OptKind::kSgd ? Optimizer::sgd(cfg.lower_lr, cfg.lower_wd)
                                            : Optimizer::adamw(cfg.lower_lr, cfg.lower_wd);
  ck.lower.schedule = Schedule{cfg.iterations, cfg.warmup_frac};
  {
    const auto params = ck.phi.tensors();
    std::vector<const Tensor*> cparams(params.begin(), params.end());
    ck.lower.init_moments(cparams);
  }

  ck.strategy.kind = cfg.strategy;
  ck.upper = Optimizer::adamw(cfg.resolved_upper_lr(), cfg.upper_wd);
  ck.upper.schedule = Schedule{cfg.iterations, cfg.warmup_frac};
  if (cfg.strategy == StrategyKind::kTable) {
    std::vector<std::string> ids;
    ids.reserve(train_set.size());
    for (const auto& x : train_set) ids.push_back(x.id);
    ck.strategy.table = InstanceTable::create(ids, cfg.clip_lo, cfg.clip_hi, cfg.table_init);
    const auto n = static_cast<int64_t>(ck.strategy.table.size());
    ck.upper.m = {Tensor::zeros({n})};
    ck.upper.v = {Tensor::zeros({n})};
  } else if (cfg.strategy == StrategyKind::kNet) {
    Rng rng(mix_seed(cfg.seed, kTagNetInit, 0));
    ck.strategy.net = InstanceNet::init(cfg.embed_dim, cfg.net_hidden, rng);
    const auto params = ck.strategy.net.tensors();
    std::vector<const Tensor*> cparams(params.begin(), params.end());
    ck.upper.init_moments(cparams);
  }
  return ck;
}

Checkpoint train(const RunConfig& cfg, const Vocab& vocab,
                 std::span<const ReasoningTrajectory> train_set,
                 std::span<const MetaSample> meta_set, const Checkpoint& init,
                 const MetricsSink& metrics, const CheckpointSink& on_checkpoint) {
  cfg.validate();
  if (train_set.empty() || meta_set.empty()) {
    throw ValidationError("train: empty datasets");
  }
  if (!roughly_balanced(train_set, meta_set)) {
    throw ValidationError("train: sets fail balance validation (class counts differ by > 1)");
  }
  if (init.strategy.kind != cfg.strategy) {
    throw ValidationError("train: checkpoint strategy does not match config");
  }

  Checkpoint ck = init;
  Rng rng = Rng::from_state(ck.rng_state);
  const uint64_t stop =
      cfg.stop_after > 0 ? std::min(cfg.stop_after, cfg.iterations) : cfg.iterations;
  const auto n_train = static_cast<int64_t>(train_set.size());
  const auto n_meta = static_cast<int64_t>(meta_set.size());

  for (uint64_t it = ck.iteration; it < stop; ++it) {
    std::vector<const ReasoningTrajectory*> lower_batch;
    for (int b = 0; b < cfg.lower_batch; ++b) {
      lower_batch.push_back(&train_set[static_cast<size_t>(rng.uniform_int(0, n_train - 1))]);
    }
    std::vector<const MetaSample*> meta_batch;
    for (int b = 0; b < cfg.meta_batch; ++b) {
      meta_batch.push_back(&meta_set[static_cast<size_t>(rng.uniform_int(0, n_meta - 1))]);
    }

    MetricsRow row;
    row.iteration = it;
    std::vector<double> batch_weights;

    try {
      if (cfg.strategy == StrategyKind::kUniform) {
        // Plain weighted SFT; the upper step is skipped entirely.
        row.lower_loss = lower_loss_ptrs(ck.phi, vocab, ck.strategy, lower_batch);
        row.meta_loss = meta_loss_ptrs(ck.phi, vocab, meta_batch, cfg.eq2_literal);
        batch_weights.assign(lower_batch.size(), 1.0);
      } else {
        HyperGrads hg =
            hypergrad_ptrs(ck.phi, vocab, ck.strategy, lower_batch, meta_batch, cfg, ck.lower);
        row.lower_loss = hg.lower_loss;
        row.meta_loss = hg.meta_loss;
        batch_weights = std::move(hg.batch_weights);
        if (cfg.strategy == StrategyKind::kTable) {
          apply_hypergrad(ck.strategy.table, hg.table, ck.upper);
        } else {
          const auto params = ck.strategy.net.tensors();
          ck.upper.step(params, hg.net);
        }
      }

      // Committed lower step at the freshly updated weights; the probe step
      // inside hypergrad never touches optimizer state.
      lower_step_ptrs(ck.phi, vocab, ck.strategy, lower_batch, ck.lower);
    } catch (const NumericError& e) {
      throw NumericError("train: iteration " + std::to_string(it) + ": " + e.what());
    }

    fill_weight_stats(row, ck.strategy, train_set, lower_batch, batch_weights);
    if (metrics) metrics(row);

    ck.iteration = it + 1;
    ck.rng_state = rng.state();
    if (on_checkpoint && cfg.checkpoint_every > 0 && ck.iteration % cfg.checkpoint_every == 0 &&
        ck.iteration != stop) {
      on_checkpoint(ck);
    }
  }

  ck.iteration = stop;
  ck.rng_state = rng.state();
  if (on_checkpoint) on_checkpoint(ck);
  return ck;
}

}  // namespace iwprm
