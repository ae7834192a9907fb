#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "iwprm/optimizer.hpp"
#include "iwprm/rng.hpp"
#include "iwprm/tape.hpp"

namespace iwprm {

// Explicit per-sample weights, one entry per training instance, clipped to
// [clip_lo, clip_hi] after every update. Storage order follows registration
// order (training-set order), so iteration is deterministic.
struct InstanceTable {
  std::vector<std::string> ids;
  std::vector<double> weights;
  double clip_lo = 0.0;
  double clip_hi = 2.0;
  double init_value = 1.0;

  static InstanceTable create(std::span<const std::string> instance_ids, double lo = 0.0,
                              double hi = 2.0, double init = 1.0);

  size_t position(const std::string& id) const;  // throws ValidationError on unknown id
  size_t size() const { return weights.size(); }
  void clip_entry(size_t pos);

 private:
  std::unordered_map<std::string, size_t> index_;
};

double table_weight(const InstanceTable& table, const std::string& id);

// AdamW update on the listed entries only; untouched entries keep both their
// weight and their moments. Uses `upper`'s moments slot 0 (shape [n]) and a
// shared step counter, then projects every touched weight back into range.
void apply_hypergrad(InstanceTable& table, std::span<const std::pair<size_t, double>> grads,
                     Optimizer& upper);

// Weight network: sigmoid(W2 relu(W1 f + b1) + b2) over a detached PRM
// feature. Parameter count is input_width*hidden + hidden + hidden + 1,
// independent of the dataset size.
struct InstanceNet {
  int64_t input_width = 0;
  int64_t hidden = 10;
  Tensor w1, b1, w2, b2;  // [h,d], [h], [1,h], [1]

  static InstanceNet init(int64_t input_width, int64_t hidden, Rng& rng);

  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  static const std::vector<std::string>& tensor_names();
  int64_t param_count() const;
};

double net_weight(const InstanceNet& net, const Tensor& feature);

struct NetVals {
  Value w1, b1, w2, b2;
  std::vector<Value> list() const { return {w1, b1, w2, b2}; }
};

NetVals register_net_leaves(Tape& t, const InstanceNet& net);
// Weight node for one instance; the feature enters as a constant so no
// gradient flows back into the scorer.
Value net_weight_node(Tape& t, const NetVals& nv, const Tensor& feature);

enum class StrategyKind : uint8_t { kUniform = 0, kTable = 1, kNet = 2 };

const char* strategy_name(StrategyKind k);
StrategyKind strategy_from_name(const std::string& name);

struct WeightStrategy {
  StrategyKind kind = StrategyKind::kUniform;
  InstanceTable table;
  InstanceNet net;
};

// Dispatch: table by id, net by feature, uniform is constant 1.
double weight_of(const WeightStrategy& strategy, const std::string& id, const Tensor* feature);

}  // namespace iwprm
