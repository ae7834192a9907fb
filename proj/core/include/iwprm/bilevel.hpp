#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "iwprm/reweighter.hpp"
#include "iwprm/scorer.hpp"
#include "iwprm/trajectory.hpp"
#include "iwprm/vocab.hpp"

namespace iwprm {

enum class HypergradMode : uint8_t { kExactUnroll = 0, kSgdProxy = 1 };

const char* hypergrad_mode_name(HypergradMode m);
HypergradMode hypergrad_mode_from_name(const std::string& name);

// Full training configuration. Learning-rate and decay defaults follow the
// reference recipe; the desk-scale presets override them.
struct RunConfig {
  uint64_t seed = 1;
  StrategyKind strategy = StrategyKind::kTable;
  HypergradMode hypergrad_mode = HypergradMode::kExactUnroll;
  OptKind lower_opt = OptKind::kAdamW;
  uint64_t iterations = 2000;
  uint64_t stop_after = 0;  // 0 = run to `iterations`; used for resume tests
  double lower_lr = 5e-5;
  double lower_wd = 1e-2;
  double upper_lr = 0.0;  // 0 = strategy default: 5e-3 table, 5e-4 net
  double upper_wd = 1e-3;
  int lower_batch = 8;
  int meta_batch = 8;
  double warmup_frac = 0.05;
  int unroll_steps = 1;
  double clip_lo = 0.0;
  double clip_hi = 2.0;
  double table_init = 1.0;
  int64_t embed_dim = 32;
  int64_t net_hidden = 10;
  uint64_t checkpoint_every = 500;
  // Literal aggregation-loss reading: always aggregate "+" logits and regress
  // sigma(A) onto r. Default uses the selected-token logit with target 1.
  bool eq2_literal = false;

  double resolved_upper_lr() const;
  void validate() const;
};

// Everything needed for a bit-exact resume.
struct Checkpoint {
  uint32_t version = 1;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  uint64_t iteration = 0;
  std::array<uint64_t, 4> rng_state{};
  PrmParams phi;
  WeightStrategy strategy;
  Optimizer lower;
  Optimizer upper;
};

struct MetricsRow {
  uint64_t iteration = 0;
  double lower_loss = 0.0;
  double meta_loss = 0.0;
  double mean_weight = 1.0;
  double weight_std = 0.0;
  double clean_mean_weight = 0.0;
  double noisy_mean_weight = 0.0;
};

using MetricsSink = std::function<void(const MetricsRow&)>;
using CheckpointSink = std::function<void(const Checkpoint&)>;

// Eq-1-style weighted sum: sum_x alpha_x * sum_i CE(s_i, p_i), no batch or
// step-count normalization. CE is evaluated in logit space
// (softplus(z) - p*z with z = z_plus - z_minus) so extreme scores cannot
// underflow the loss.
double lower_loss(const PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                  std::span<const ReasoningTrajectory> batch);

// Mean over the batch of (sigma(A) - target)^2 where A is the mean selected
// per-step logit. Default: the logit of the ground-truth token with target 1;
// literal mode: the "+" logit with target r.
double meta_loss(const PrmParams& phi, const Vocab& vocab, std::span<const MetaSample> batch,
                 bool eq2_literal = false);

// One committed optimizer step on the lower loss; strategy state untouched.
void lower_step(PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                std::span<const ReasoningTrajectory> batch, Optimizer& opt);

struct HyperGrads {
  std::vector<std::pair<size_t, double>> table;  // table position -> dL_meta/d alpha
  std::vector<Tensor> net;                       // aligned with InstanceNet::tensors()
  std::vector<double> batch_weights;             // alpha_x per lower-batch instance
  double lower_loss = 0.0;
  double meta_loss = 0.0;
};

// d(meta loss after one probe lower step)/d(strategy parameters).
//
// exact-unroll: tapes the lower gradient, applies a differentiable optimizer
// step, evaluates the meta loss at the probed parameters and differentiates
// back to the instance weights (second-order through the re-taped gradient).
//
// sgd-proxy: the closed form dL/d alpha_x = -lr_eff * <g_x, g_meta> with g_x
// the unweighted per-instance lower gradient and g_meta the meta gradient at
// the probed parameters; requires an SGD lower optimizer. For the net
// strategy the per-instance scalars are chained through d alpha_x / d psi.
//
// `lower_opt` is read only; the probe step never mutates optimizer state.
HyperGrads hypergrad(const PrmParams& phi, const Vocab& vocab, const WeightStrategy& strategy,
                     std::span<const ReasoningTrajectory> lower_batch,
                     std::span<const MetaSample> meta_batch, const RunConfig& cfg,
                     const Optimizer& lower_opt);

// Exactly one epoch of weighted SFT with all weights fixed at 1; returns the
// fine-tuned parameters. `steps_out` reports ceil(N/batch).
PrmParams cold_start(PrmParams phi, const Vocab& vocab,
                     std::span<const ReasoningTrajectory> sft_set, const RunConfig& cfg,
                     uint64_t* steps_out = nullptr);

// Alternating bi-level loop from `init` (a fresh checkpoint made by
// make_initial_checkpoint, or a saved one when resuming). Emits one metrics
// row per outer iteration and a checkpoint every checkpoint_every iterations
// plus one at the end.
Checkpoint train(const RunConfig& cfg, const Vocab& vocab,
                 std::span<const ReasoningTrajectory> train_set,
                 std::span<const MetaSample> meta_set, const Checkpoint& init,
                 const MetricsSink& metrics = {}, const CheckpointSink& on_checkpoint = {});

Checkpoint make_initial_checkpoint(const RunConfig& cfg, const PrmParams& phi,
                                   std::span<const ReasoningTrajectory> train_set,
                                   uint64_t config_hash);

// Fresh scorer parameters, deterministic in (cfg.seed, cfg.embed_dim).
PrmParams init_prm(const RunConfig& cfg, const Vocab& vocab);

}  // namespace iwprm
