#pragma once

#include <functional>
#include <vector>

#include "gapnet/tensor.h"

namespace gapnet {

// Reverse-mode record of executed primitives. One training step owns one
// tape exclusively; nodes are appended in execution order, so parents always
// precede their children and a single reverse sweep propagates gradients.
//
// Calling backward() twice without a fresh tape accumulates gradients.
template <typename T>
class Tape {
 public:
  // Reads the node's upstream gradient and accumulates into its parents.
  using BackwardFn = std::function<void(Tape&, const std::vector<T>&)>;

  // Registers a parameter or input as a leaf node and attaches the tensor.
  int watch(Tensor<T>& leaf);

  // Appends an op node. Parent ids may be -1 for detached inputs; the
  // backward callback is responsible for skipping those.
  int record(std::vector<int> parents, int64_t numel, BackwardFn fn);

  void backward(const Tensor<T>& loss);

  void accumulate(int node, const T* grad, int64_t n);
  bool has_grad(int node) const;

  // Gradient of an attached tensor; zeros of matching size if untouched.
  std::vector<T> grad_of(const Tensor<T>& t) const;

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    std::vector<int> parents;
    int64_t numel = 0;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  std::vector<std::vector<T>>* sweep_ = nullptr;  // live only inside backward()
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace gapnet
