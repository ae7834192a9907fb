#pragma once

#include <cstdint>
#include <vector>

#include "iwprm/trajectory.hpp"

namespace iwprm {

// Synthetic benchmark: modular-arithmetic chains. A question fixes a start
// value and a list of operations ("start 7 ; + 5 ; * 3 ; - 2 = ?"); a
// trajectory states the running value after each operation, all arithmetic
// modulo kChainModulus. Generated label-noisy instances come from a shifted
// content distribution (longer chains, multiply-heavy operations) and have
// every step label inverted, so noisiness is both a per-instance flag and a
// statistically visible property of the content.
struct GenSpec {
  uint64_t seed = 1;
  int64_t n_train = 2000;
  int64_t n_meta = 300;  // meta questions; each yields candidates_per_pool samples
  int64_t n_eval_pools = 500;
  int candidates_per_pool = 4;
  int chain_min = 2;
  int chain_max = 5;
  double step_error = 0.3;    // per-step probability of a corrupted stated value
  double label_noise = 0.2;   // rho: fraction of train instances with flipped labels
  double trivial_frac = 0.1;  // fraction of train instances with 1-step chains
  int workers = 1;

  void validate() const;  // throws ValidationError
};

inline constexpr int kChainModulus = 16;

struct GeneratedData {
  std::vector<ReasoningTrajectory> train;
  std::vector<MetaSample> meta;
  std::vector<CandidatePool> pools;
};

// Deterministic in (spec, seed): every instance draws from its own derived
// RNG stream, so output is byte-identical for any worker count. Exactly
// round(label_noise * n_train) train instances are flagged noisy and
// round(trivial_frac * n_train) trivial (disjoint sets). Meta and eval
// questions are re-sampled until they do not collide with any train question.
GeneratedData generate(const GenSpec& spec);

}  // namespace iwprm
