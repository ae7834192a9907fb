#pragma once

#include <span>
#include <string>
#include <vector>

#include "iwprm/rng.hpp"
#include "iwprm/tape.hpp"
#include "iwprm/trajectory.hpp"
#include "iwprm/vocab.hpp"

namespace iwprm {

// Single-layer gated recurrent encoder with a two-logit head. Head row 0 is
// the "+" class, row 1 the "-" class; a step's score is the binary softmax
// probability of "+". The head starts at zero so an untrained scorer emits
// 0.5 everywhere.
struct PrmParams {
  int64_t vocab_size = 0;
  int64_t width = 0;
  Tensor emb;                 // [V, d]
  Tensor wz, wr, wh;          // input mixes   [d, d]
  Tensor uz, ur, uh;          // hidden mixes  [d, d]
  Tensor bz, br, bh;          // [d]
  Tensor head_w;              // [2, d], rows = {+, -}
  Tensor head_b;              // [2]

  static PrmParams init(int64_t vocab_size, int64_t width, Rng& rng);

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  static const std::vector<std::string>& tensor_names();
  int64_t param_count() const;
};

// Token context for scoring step i: question ++ SEP ++ step_1 ++ ... ++ SEP
// ++ step_i.
struct StepContext {
  std::vector<int32_t> ids;
  int step = 0;  // 1-based step index this context ends at
};

// Whole-trajectory encoding with the positions where each step's tokens end;
// the context for step i is the prefix of `ids` through step_ends[i-1].
struct TrajectoryEncoding {
  std::vector<int32_t> ids;
  std::vector<int32_t> step_ends;
};

TrajectoryEncoding encode_trajectory(const Vocab& vocab, const std::string& question,
                                     std::span<const std::string> steps);
StepContext encode_context(const Vocab& vocab, const ReasoningTrajectory& traj, int step_index);

// Tape handles for one parameter set; either leaves (training) or the output
// nodes of an unrolled optimizer step.
struct PrmVals {
  Value emb, wz, wr, wh, uz, ur, uh, bz, br, bh, head_w, head_b;

  std::vector<Value> list() const;
  static PrmVals from_list(std::span<const Value> vals);
};

PrmVals register_prm_leaves(Tape& t, const PrmParams& p);

struct StepNodes {
  Value z_plus, z_minus;  // scalars
  Value hidden;           // [d] encoder state at the step boundary
};

// One left-to-right pass; emits logits at every step boundary. Because the
// encoder is causal, the boundary state for step i is identical to running
// the truncated context, which keeps per-step scores prefix-consistent.
std::vector<StepNodes> forward_steps(Tape& t, const PrmVals& pv, const TrajectoryEncoding& enc);

struct StepLogits {
  double z_plus = 0.0, z_minus = 0.0;
  Tensor hidden;  // exposed as the Instance Net feature
};

StepLogits step_logits(const PrmParams& p, const StepContext& ctx);
double step_score(double z_plus, double z_minus);
std::vector<double> score_trajectory(const PrmParams& p, const Vocab& vocab,
                                     const ReasoningTrajectory& traj);
std::vector<double> score_steps(const PrmParams& p, const Vocab& vocab,
                                const std::string& question, std::span<const std::string> steps);

// Encoder state after the last step's context, detached from any tape.
Tensor last_step_feature(const PrmParams& p, const Vocab& vocab, const std::string& question,
                         std::span<const std::string> steps);

}  // namespace iwprm
