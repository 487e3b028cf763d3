#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace gapnet {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major n-d array. `node` links the value to a Tape node when the
// tensor participates in a recorded computation; -1 means detached.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  int node = -1;

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, std::vector<T> values);

  static Tensor full(Shape s, T value);
  static Tensor scalar(T value);

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int extent(int axis) const;
  bool is_scalar() const { return numel() == 1; }
  T item() const;

  T& at(std::initializer_list<int> idx);
  T at(std::initializer_list<int> idx) const;

  bool all_finite() const;
};

extern template struct Tensor<float>;
extern template struct Tensor<double>;

}  // namespace gapnet
