#include "iwprm/scorer.hpp"

#include <cmath>

#include "iwprm/errors.hpp"

namespace iwprm {

PrmParams PrmParams::init(int64_t vocab_size, int64_t width, Rng& rng) {
  PrmParams p;
  p.vocab_size = vocab_size;
  p.width = width;
  const double emb_scale = 0.1;
  const double rec_scale = 1.0 / std::sqrt(static_cast<double>(width));

  auto rand_mat = [&](int64_t r, int64_t c, double s) {
    Tensor t = Tensor::zeros({r, c});
    for (auto& v : t.data) v = rng.uniform(-s, s);
    return t;
  };

  p.emb = rand_mat(vocab_size, width, emb_scale);
  p.wz = rand_mat(width, width, rec_scale);
  p.wr = rand_mat(width, width, rec_scale);
  p.wh = rand_mat(width, width, rec_scale);
  p.uz = rand_mat(width, width, rec_scale);
  p.ur = rand_mat(width, width, rec_scale);
  p.uh = rand_mat(width, width, rec_scale);
  p.bz = Tensor::zeros({width});
  p.br = Tensor::zeros({width});
  p.bh = Tensor::zeros({width});
  p.head_w = Tensor::zeros({2, width});
  p.head_b = Tensor::zeros({2});
  return p;
}

std::vector<Tensor*> PrmParams::tensors() {
  return {&emb, &wz, &wr, &wh, &uz, &ur, &uh, &bz, &br, &bh, &head_w, &head_b};
}

std::vector<const Tensor*> PrmParams::tensors() const {
  return {&emb, &wz, &wr, &wh, &uz, &ur, &uh, &bz, &br, &bh, &head_w, &head_b};
}

const std::vector<std::string>& PrmParams::tensor_names() {
  static const std::vector<std::string> names = {"emb", "wz", "wr", "wh", "uz",     "ur",
                                                 "uh",  "bz", "br", "bh", "head_w", "head_b"};
  return names;
}

int64_t PrmParams::param_count() const {
  int64_t n = 0;
  for (const Tensor* t : tensors()) n += t->numel();
  return n;
}

TrajectoryEncoding encode_trajectory(const Vocab& vocab, const std::string& question,
                                     std::span<const std::string> steps) {
  if (steps.empty()) {
    throw ValidationError("encode: trajectory has no steps");
  }
  TrajectoryEncoding enc;
  enc.ids = vocab.encode(question);
  if (enc.ids.empty()) {
    throw ValidationError("encode: empty question");
  }
  for (const auto& step : steps) {
    enc.ids.push_back(Vocab::kSep);
    const auto step_ids = vocab.encode(step);
    if (step_ids.empty()) {
      throw ValidationError("encode: empty step text");
    }
    enc.ids.insert(enc.ids.end(), step_ids.begin(), step_ids.end());
    enc.step_ends.push_back(static_cast<int32_t>(enc.ids.size()) - 1);
  }
  return enc;
}

StepContext encode_context(const Vocab& vocab, const ReasoningTrajectory& traj, int step_index) {
  if (step_index < 1 || step_index > static_cast<int>(traj.steps.size())) {
    throw ValidationError("encode: step index " + std::to_string(step_index) +
                          " out of range for trajectory with " +
                          std::to_string(traj.steps.size()) + " steps");
  }
  const auto enc = encode_trajectory(vocab, traj.question, traj.steps);
  StepContext ctx;
  const auto end = enc.step_ends[static_cast<size_t>(step_index) - 1];
  ctx.ids.assign(enc.ids.begin(), enc.ids.begin() + end + 1);
  ctx.step = step_index;
  return ctx;
}

std::vector<Value> PrmVals::list() const {
  return {emb, wz, wr, wh, uz, ur, uh, bz, br, bh, head_w, head_b};
}

PrmVals PrmVals::from_list(std::span<const Value> vals) {
  if (vals.size() != 12) throw ValidationError("PrmVals: expected 12 values");
  PrmVals p;
  p.emb = vals[0];
  p.wz = vals[1];
  p.wr = vals[2];
  p.wh = vals[3];
  p.uz = vals[4];
  p.ur = vals[5];
  p.uh = vals[6];
  p.bz = vals[7];
  p.br = vals[8];
  p.bh = vals[9];
  p.head_w = vals[10];
  p.head_b = vals[11];
  return p;
}

PrmVals register_prm_leaves(Tape& t, const PrmParams& p) {
  PrmVals v;
  v.emb = t.leaf(p.emb);
  v.wz = t.leaf(p.wz);
  v.wr = t.leaf(p.wr);
  v.wh = t.leaf(p.wh);
  v.uz = t.leaf(p.uz);
  v.ur = t.leaf(p.ur);
  v.uh = t.leaf(p.uh);
  v.bz = t.leaf(p.bz);
  v.br = t.leaf(p.br);
  v.bh = t.leaf(p.bh);
  v.head_w = t.leaf(p.head_w);
  v.head_b = t.leaf(p.head_b);
  return v;
}

namespace {

// h' = (1-z) .* h + z .* tanh(Wh x + Uh (r .* h) + bh)
Value gru_cell(Tape& t, const PrmVals& p, Value x, Value h) {
  Value z = t.sigmoid(t.add(t.add(t.matvec(p.wz, x), t.matvec(p.uz, h)), p.bz));
  Value r = t.sigmoid(t.add(t.add(t.matvec(p.wr, x), t.matvec(p.ur, h)), p.br));
  Value cand = t.tanh_(t.add(t.add(t.matvec(p.wh, x), t.matvec(p.uh, t.mul(r, h))), p.bh));
  Value keep = t.mul(t.add_scalar(t.neg(z), 1.0), h);
  return t.add(keep, t.mul(z, cand));
}

}  // namespace

std::vector<StepNodes> forward_steps(Tape& t, const PrmVals& pv, const TrajectoryEncoding& enc) {
  if (enc.ids.empty() || enc.step_ends.empty()) {
    throw ValidationError("forward: empty encoding");
  }
  const int64_t width = t.val(pv.bz).numel();
  Value h = t.constant(Tensor::zeros({width}));

  std::vector<StepNodes> out;
  out.reserve(enc.step_ends.size());
  size_t next_end = 0;
  for (size_t pos = 0; pos < enc.ids.size(); ++pos) {
    Value x = t.gather_row(pv.emb, enc.ids[pos]);
    h = gru_cell(t, pv, x, h);
    if (next_end < enc.step_ends.size() &&
        static_cast<int32_t>(pos) == enc.step_ends[next_end]) {
      Value logits = t.add(t.matvec(pv.head_w, h), pv.head_b);
      out.push_back(StepNodes{t.index(logits, 0), t.index(logits, 1), h});
      ++next_end;
    }
  }
  if (out.size() != enc.step_ends.size()) {
    throw ValidationError("forward: step boundaries not aligned with token stream");
  }
  return out;
}

StepLogits step_logits(const PrmParams& p, const StepContext& ctx) {
  if (ctx.ids.empty()) throw ValidationError("step_logits: empty context");
  Tape t;
  PrmVals pv = register_prm_leaves(t, p);
  TrajectoryEncoding enc;
  enc.ids = ctx.ids;
  enc.step_ends = {static_cast<int32_t>(ctx.ids.size()) - 1};
  const auto nodes = forward_steps(t, pv, enc);
  StepLogits out;
  out.z_plus = t.scalar_value(nodes[0].z_plus);
  out.z_minus = t.scalar_value(nodes[0].z_minus);
  out.hidden = t.val(nodes[0].hidden);
  return out;
}

double step_score(double z_plus, double z_minus) {
  // binary softmax over {+,-} == logistic(z_plus - z_minus), stable form
  const double x = z_plus - z_minus;
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> score_steps(const PrmParams& p, const Vocab& vocab,
                                const std::string& question, std::span<const std::string> steps) {
  Tape t;
  PrmVals pv = register_prm_leaves(t, p);
  const auto enc = encode_trajectory(vocab, question, steps);
  const auto nodes = forward_steps(t, pv, enc);
  std::vector<double> scores;
  scores.reserve(nodes.size());
  for (const auto& n : nodes) {
    scores.push_back(step_score(t.scalar_value(n.z_plus), t.scalar_value(n.z_minus)));
  }
  return scores;
}

std::vector<double> score_trajectory(const PrmParams& p, const Vocab& vocab,
                                     const ReasoningTrajectory& traj) {
  return score_steps(p, vocab, traj.question, traj.steps);
}

Tensor last_step_feature(const PrmParams& p, const Vocab& vocab, const std::string& question,
                         std::span<const std::string> steps) {
  Tape t;
  PrmVals pv = register_prm_leaves(t, p);
  const auto enc = encode_trajectory(vocab, question, steps);
  const auto nodes = forward_steps(t, pv, enc);
  return t.val(nodes.back().hidden);
}

}  // namespace iwprm
