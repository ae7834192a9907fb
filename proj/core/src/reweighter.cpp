#include "iwprm/reweighter.hpp"

#include <algorithm>
#include <cmath>

#include "iwprm/errors.hpp"

namespace iwprm {

InstanceTable InstanceTable::create(std::span<const std::string> instance_ids, double lo,
                                    double hi, double init) {
  if (lo >= hi) throw ValidationError("table: clip_lo must be below clip_hi");
  InstanceTable t;
  t.clip_lo = lo;
  t.clip_hi = hi;
  t.init_value = init;
  t.ids.assign(instance_ids.begin(), instance_ids.end());
  t.weights.assign(t.ids.size(), std::clamp(init, lo, hi));
  for (size_t i = 0; i < t.ids.size(); ++i) {
    auto [it, inserted] = t.index_.emplace(t.ids[i], i);
    if (!inserted) throw ValidationError("table: duplicate instance id '" + t.ids[i] + "'");
  }
  return t;
}

size_t InstanceTable::position(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw ValidationError("table: unknown instance id '" + id + "'");
  }
  return it->second;
}

void InstanceTable::clip_entry(size_t pos) {
  weights[pos] = std::clamp(weights[pos], clip_lo, clip_hi);
}

double table_weight(const InstanceTable& table, const std::string& id) {
  return table.weights[table.position(id)];
}

void apply_hypergrad(InstanceTable& table, std::span<const std::pair<size_t, double>> grads,
                     Optimizer& upper) {
  if (upper.kind != OptKind::kAdamW) {
    throw ValidationError("table: upper optimizer must be AdamW");
  }
  if (upper.m.size() != 1 || upper.m[0].numel() != static_cast<int64_t>(table.size())) {
    throw ValidationError("table: upper optimizer moments not sized to the table");
  }
  for (const auto& [pos, g] : grads) {
    if (!std::isfinite(g)) {
      throw NumericError("table: non-finite hypergradient for entry " + std::to_string(pos));
    }
    if (pos >= table.size()) {
      throw ValidationError("table: gradient for unknown position");
    }
  }

  const double lr_eff = upper.effective_lr();
  const uint64_t t = upper.step_count + 1;
  const double bc1 = 1.0 - std::pow(upper.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(upper.beta2, static_cast<double>(t));
  for (const auto& [pos, g] : grads) {
    double& m = upper.m[0][static_cast<int64_t>(pos)];
    double& v = upper.v[0][static_cast<int64_t>(pos)];
    double& w = table.weights[pos];
    m = upper.beta1 * m + (1.0 - upper.beta1) * g;
    v = upper.beta2 * v + (1.0 - upper.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    w -= lr_eff * (mhat / (std::sqrt(vhat) + upper.eps) + upper.weight_decay * w);
    table.clip_entry(pos);
  }
  ++upper.step_count;
}

InstanceNet InstanceNet::init(int64_t input_width, int64_t hidden, Rng& rng) {
  InstanceNet n;
  n.input_width = input_width;
  n.hidden = hidden;
  const double scale = 1.0 / std::sqrt(static_cast<double>(input_width));
  n.w1 = Tensor::zeros({hidden, input_width});
  for (auto& v : n.w1.data) v = rng.uniform(-scale, scale);
  n.b1 = Tensor::zeros({hidden});
  n.w2 = Tensor::zeros({1, hidden});
  const double scale2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto& v : n.w2.data) v = rng.uniform(-scale2, scale2);
  n.b2 = Tensor::zeros({1});
  return n;
}

std::vector<Tensor*> InstanceNet::tensors() { return {&w1, &b1, &w2, &b2}; }
std::vector<const Tensor*> InstanceNet::tensors() const { return {&w1, &b1, &w2, &b2}; }

const std::vector<std::string>& InstanceNet::tensor_names() {
  static const std::vector<std::string> names = {"w1", "b1", "w2", "b2"};
  return names;
}

int64_t InstanceNet::param_count() const {
  return w1.numel() + b1.numel() + w2.numel() + b2.numel();
}

double net_weight(const InstanceNet& net, const Tensor& feature) {
  Tape t;
  NetVals nv = register_net_leaves(t, net);
  const double w = t.scalar_value(net_weight_node(t, nv, feature));
  // sigmoid can round to 0 or 1 in f64 on saturated inputs; keep the
  // contract that weights lie strictly inside (0,1)
  constexpr double lo = 1e-300;
  constexpr double hi = 1.0 - 1e-16;
  return std::clamp(w, lo, hi);
}

NetVals register_net_leaves(Tape& t, const InstanceNet& net) {
  NetVals v;
  v.w1 = t.leaf(net.w1);
  v.b1 = t.leaf(net.b1);
  v.w2 = t.leaf(net.w2);
  v.b2 = t.leaf(net.b2);
  return v;
}

Value net_weight_node(Tape& t, const NetVals& nv, const Tensor& feature) {
  if (feature.shape.size() != 1 || feature.numel() != t.val(nv.w1).cols()) {
    throw ValidationError("net: feature width " + shape_str(feature.shape) +
                          " does not match input width " +
                          std::to_string(t.val(nv.w1).cols()));
  }
  Value f = t.constant(feature);
  Value hidden = t.relu(t.add(t.matvec(nv.w1, f), nv.b1));
  Value out = t.add(t.matvec(nv.w2, hidden), nv.b2);
  return t.index(t.sigmoid(out), 0);
}

const char* strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::kUniform: return "uniform";
    case StrategyKind::kTable: return "table";
    case StrategyKind::kNet: return "net";
  }
  return "uniform";
}

StrategyKind strategy_from_name(const std::string& name) {
  if (name == "uniform") return StrategyKind::kUniform;
  if (name == "table") return StrategyKind::kTable;
  if (name == "net") return StrategyKind::kNet;
  throw ValidationError("unknown strategy '" + name + "' (expected uniform|table|net)");
}

double weight_of(const WeightStrategy& strategy, const std::string& id, const Tensor* feature) {
  switch (strategy.kind) {
    case StrategyKind::kUniform:
      return 1.0;
    case StrategyKind::kTable:
      return table_weight(strategy.table, id);
    case StrategyKind::kNet:
      if (feature == nullptr) {
        throw ValidationError("weight_of: net strategy requires a feature vector");
      }
      return net_weight(strategy.net, *feature);
  }
  throw ValidationError("weight_of: bad strategy kind");
}

}  // namespace iwprm
