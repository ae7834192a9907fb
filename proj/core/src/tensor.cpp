#include "iwprm/tensor.hpp"

#include <cmath>
#include <sstream>

#include "iwprm/errors.hpp"

namespace iwprm {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ValidationError("tensor: data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape s) {
  auto n = static_cast<size_t>(shape_numel(s));
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape s, double v) {
  auto n = static_cast<size_t>(shape_numel(s));
  return Tensor(std::move(s), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vec(std::initializer_list<double> v) {
  return Tensor(Shape{static_cast<int64_t>(v.size())}, std::vector<double>(v));
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ValidationError("tensor: item() on non-scalar of shape " + shape_str(shape));
  }
  return data[0];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace iwprm
