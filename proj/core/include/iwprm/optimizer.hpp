#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "iwprm/tape.hpp"

namespace iwprm {

enum class OptKind : uint8_t { kSgd = 0, kAdamW = 1 };

// Cosine decay with a linear warm-up over the first `warmup_frac` of steps.
// total_steps == 0 disables scheduling (multiplier stays 1).
struct Schedule {
  uint64_t total_steps = 0;
  double warmup_frac = 0.05;
};

// Multiplier in [0,1]: ramps 0 -> 1 over the warm-up steps, then decays with
// a half cosine to 0 at total_steps.
double schedule_multiplier(const Schedule& s, uint64_t step);

struct Optimizer {
  OptKind kind = OptKind::kAdamW;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Schedule schedule;
  uint64_t step_count = 0;
  std::vector<Tensor> m, v;  // AdamW moments, aligned with the param list

  static Optimizer sgd(double lr, double weight_decay = 0.0, Schedule s = {});
  static Optimizer adamw(double lr, double weight_decay = 0.0, Schedule s = {});

  void init_moments(std::span<const Tensor* const> params);
  bool moments_ready() const { return kind == OptKind::kSgd || !m.empty(); }
  double effective_lr() const { return lr * schedule_multiplier(schedule, step_count); }

  // One in-place update. SGD: p -= lr_eff * (g + wd*p). AdamW: decoupled
  // weight decay with bias correction. Increments step_count.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);
};

// Emits tape nodes for the parameters after one optimizer step, given grads
// that live on the tape. Does not mutate `opt`; moments and the step counter
// are read as constants. This is the probe step that hypergradients
// differentiate through.
std::vector<Value> taped_step(Tape& t, const Optimizer& opt, std::span<const Value> params,
                              std::span<const Value> grads);

}  // namespace iwprm
