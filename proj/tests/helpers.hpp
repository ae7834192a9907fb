#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "iwprm/rng.hpp"
#include "iwprm/tensor.hpp"
#include "iwprm/trajectory.hpp"

namespace iwprm::testing {

// Relative error with the usual gradcheck floor: values below `floor` in
// magnitude on both sides compare equal.
inline double rel_err(double a, double b, double floor = 1e-10) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale < floor) return 0.0;
  return std::abs(a - b) / scale;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

// Central finite differences of a scalar function over a flat parameter
// vector.
inline std::vector<double> fd_grad(const std::function<double(const std::vector<double>&)>& f,
                                   std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> flatten(const std::vector<Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

// Tiny hand-built trajectory for loss/scorer tests; labels default to 1.
inline ReasoningTrajectory traj(std::string id, std::string question,
                                std::vector<std::string> steps, std::vector<int> labels = {}) {
  ReasoningTrajectory t;
  t.id = std::move(id);
  t.question = std::move(question);
  t.steps = std::move(steps);
  t.step_labels = labels.empty() ? std::vector<int>(t.steps.size(), 1) : std::move(labels);
  t.final_answer = t.steps.back();
  t.final_correct = 1;
  return t;
}

}  // namespace iwprm::testing
