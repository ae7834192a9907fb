#include "iwprm/optimizer.hpp"

#include <cmath>
#include <string>

#include "iwprm/errors.hpp"

namespace iwprm {
namespace {

Tensor scaled(const Tensor& t, double c) {
  Tensor out = t;
  for (auto& v : out.data) v *= c;
  return out;
}

}  // namespace

double schedule_multiplier(const Schedule& s, uint64_t step) {
  if (s.total_steps == 0) return 1.0;
  if (step > s.total_steps) {
    throw ValidationError("schedule: step " + std::to_string(step) + " beyond horizon " +
                          std::to_string(s.total_steps));
  }
  const auto warmup = static_cast<uint64_t>(
      std::llround(s.warmup_frac * static_cast<double>(s.total_steps)));
  if (warmup > 0 && step < warmup) {
    return static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double span = static_cast<double>(s.total_steps - warmup);
  if (span <= 0.0) return 1.0;
  const double progress = static_cast<double>(step - warmup) / span;
  return 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

Optimizer Optimizer::sgd(double lr, double weight_decay, Schedule s) {
  Optimizer o;
  o.kind = OptKind::kSgd;
  o.lr = lr;
  o.weight_decay = weight_decay;
  o.schedule = s;
  return o;
}

Optimizer Optimizer::adamw(double lr, double weight_decay, Schedule s) {
  Optimizer o;
  o.kind = OptKind::kAdamW;
  o.lr = lr;
  o.weight_decay = weight_decay;
  o.schedule = s;
  return o;
}

void Optimizer::init_moments(std::span<const Tensor* const> params) {
  m.clear();
  v.clear();
  if (kind != OptKind::kAdamW) return;
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Tensor* p : params) {
    m.push_back(Tensor::zeros(p->shape));
    v.push_back(Tensor::zeros(p->shape));
  }
}

void Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw ValidationError("optimizer: param/grad count mismatch");
  }
  if (schedule.total_steps > 0 && step_count >= schedule.total_steps) {
    throw ValidationError("optimizer: step counter " + std::to_string(step_count) +
                          " outside schedule horizon " + std::to_string(schedule.total_steps));
  }
  const double lr_eff = effective_lr();

  if (kind == OptKind::kSgd) {
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      const Tensor& g = grads[i];
      if (!p.same_shape(g)) {
        throw ValidationError("optimizer: grad shape " + shape_str(g.shape) +
                              " does not match param " + shape_str(p.shape));
      }
      for (int64_t k = 0; k < p.numel(); ++k) {
        p[k] -= lr_eff * (g[k] + weight_decay * p[k]);
      }
    }
    ++step_count;
    return;
  }

  if (m.size() != params.size()) {
    throw ValidationError("optimizer: AdamW moments not initialized for param set");
  }
  const uint64_t t = step_count + 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g) || !p.same_shape(m[i])) {
      throw ValidationError("optimizer: grad shape " + shape_str(g.shape) +
                            " does not match param " + shape_str(p.shape));
    }
    for (int64_t k = 0; k < p.numel(); ++k) {
      m[i][k] = beta1 * m[i][k] + (1.0 - beta1) * g[k];
      v[i][k] = beta2 * v[i][k] + (1.0 - beta2) * g[k] * g[k];
      const double mhat = m[i][k] / bc1;
      const double vhat = v[i][k] / bc2;
      p[k] -= lr_eff * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[k]);
    }
  }
  ++step_count;
}

std::vector<Value> taped_step(Tape& t, const Optimizer& opt, std::span<const Value> params,
                              std::span<const Value> grads) {
  if (params.size() != grads.size()) {
    throw ValidationError("taped_step: param/grad count mismatch");
  }
  const double lr_eff = opt.effective_lr();
  std::vector<Value> out;
  out.reserve(params.size());

  if (opt.kind == OptKind::kSgd) {
    for (size_t i = 0; i < params.size(); ++i) {
      Value upd = grads[i];
      if (opt.weight_decay != 0.0) {
        upd = t.add(upd, t.mul_scalar(params[i], opt.weight_decay));
      }
      out.push_back(t.sub(params[i], t.mul_scalar(upd, lr_eff)));
    }
    return out;
  }

  if (opt.m.size() != params.size()) {
    throw ValidationError("taped_step: AdamW moments not initialized for param set");
  }
  const uint64_t step = opt.step_count + 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  for (size_t i = 0; i < params.size(); ++i) {
    Value m_next = t.add(t.constant(scaled(opt.m[i], opt.beta1)),
                         t.mul_scalar(grads[i], 1.0 - opt.beta1));
    Value v_next = t.add(t.constant(scaled(opt.v[i], opt.beta2)),
                         t.mul_scalar(t.mul(grads[i], grads[i]), 1.0 - opt.beta2));
    Value mhat = t.mul_scalar(m_next, 1.0 / bc1);
    Value vhat = t.mul_scalar(v_next, 1.0 / bc2);
    // The 1e-30 shim keeps the sqrt differentiable where vhat is exactly
    // zero (untouched coordinates); it shifts the probe value by < 1e-15.
    Value denom = t.add_scalar(t.sqrt_(t.add_scalar(vhat, 1e-30)), opt.eps);
    Value upd = t.div(mhat, denom);
    if (opt.weight_decay != 0.0) {
      upd = t.add(upd, t.mul_scalar(params[i], opt.weight_decay));
    }
    out.push_back(t.sub(params[i], t.mul_scalar(upd, lr_eff)));
  }
  return out;
}

}  // namespace iwprm
