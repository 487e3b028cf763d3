#include "gapnet/tensor.h"

#include <cmath>

#include "gapnet/check.h"

namespace gapnet {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int e : shape) {
    GAPNET_REQUIRE(e > 0, "shape extent must be positive, got {}", e);
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  GAPNET_REQUIRE(shape_numel(shape) == static_cast<int64_t>(data.size()),
                 "shape {} does not match data length {}", shape_str(shape), data.size());
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape s, T value) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.data) v = value;
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor<T>({1}, {value});
}

template <typename T>
int Tensor<T>::extent(int axis) const {
  GAPNET_REQUIRE(axis >= 0 && axis < rank(), "axis {} out of range for rank {}", axis, rank());
  return shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  GAPNET_REQUIRE(numel() == 1, "item() needs a single-element tensor, shape is {}", shape_str(shape));
  return data[0];
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<int> idx) {
  GAPNET_REQUIRE(static_cast<int>(idx.size()) == rank(), "index rank {} vs tensor rank {}", idx.size(), rank());
  int64_t off = 0;
  int axis = 0;
  for (int i : idx) {
    GAPNET_REQUIRE(i >= 0 && i < shape[axis], "index {} out of range for axis {} extent {}", i, axis, shape[axis]);
    off = off * shape[axis] + i;
    ++axis;
  }
  return data[static_cast<size_t>(off)];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int> idx) const {
  return const_cast<Tensor<T>*>(this)->at(idx);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const T& v : data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace gapnet
