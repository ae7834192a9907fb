#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace iwprm {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major array of 64-bit floats. An empty shape is a scalar holding
// one element. Values are immutable once a tape node owns them; plain tensors
// (parameters, buffers) are ordinary value types.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);
  static Tensor vec(std::initializer_list<double> v);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t rows() const { return shape.at(0); }
  int64_t cols() const { return shape.at(1); }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
  double& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  // Requires numel() == 1.
  double item() const;

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

}  // namespace iwprm
