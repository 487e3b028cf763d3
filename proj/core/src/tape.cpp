#include "gapnet/tape.h"

#include "gapnet/check.h"

namespace gapnet {

template <typename T>
int Tape<T>::watch(Tensor<T>& leaf) {
  nodes_.push_back(Node{{}, leaf.numel(), nullptr});
  grads_.emplace_back();
  leaf.node = static_cast<int>(nodes_.size()) - 1;
  return leaf.node;
}

template <typename T>
int Tape<T>::record(std::vector<int> parents, int64_t numel, BackwardFn fn) {
  for (int p : parents) {
    GAPNET_CHECK(p < static_cast<int>(nodes_.size()), "parent id {} ahead of tape head {}", p, nodes_.size());
  }
  nodes_.push_back(Node{std::move(parents), numel, std::move(fn)});
  grads_.emplace_back();
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  GAPNET_REQUIRE(loss.is_scalar(), "backward needs a scalar loss, shape is {}", shape_str(loss.shape));
  GAPNET_REQUIRE(loss.node >= 0, "backward needs a tape-attached loss tensor");
  GAPNET_CHECK(loss.node < static_cast<int>(nodes_.size()), "loss node {} beyond tape", loss.node);

  // Each call is a complete fresh sweep over scratch storage; its leaf
  // contributions then add onto whatever earlier sweeps left behind.
  std::vector<std::vector<T>> sweep(nodes_.size());
  sweep_ = &sweep;
  const T one = T(1);
  accumulate(loss.node, &one, 1);
  for (int i = loss.node; i >= 0; --i) {
    if (sweep[i].empty() || !nodes_[i].backward) continue;
    nodes_[i].backward(*this, sweep[i]);
  }
  sweep_ = nullptr;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (sweep[i].empty()) continue;
    auto& g = grads_[i];
    if (g.empty()) g.assign(sweep[i].size(), T(0));
    for (size_t k = 0; k < sweep[i].size(); ++k) g[k] += sweep[i][k];
  }
}

template <typename T>
void Tape<T>::accumulate(int node, const T* grad, int64_t n) {
  if (node < 0) return;
  GAPNET_CHECK(node < static_cast<int>(nodes_.size()), "accumulate on unknown node {}", node);
  GAPNET_CHECK(n == nodes_[node].numel, "gradient length {} vs node value length {}", n, nodes_[node].numel);
  GAPNET_CHECK(sweep_ != nullptr, "accumulate called outside backward");
  auto& g = (*sweep_)[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(n), T(0));
  for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(i)] += grad[i];
}

template <typename T>
bool Tape<T>::has_grad(int node) const {
  return node >= 0 && node < static_cast<int>(grads_.size()) && !grads_[static_cast<size_t>(node)].empty();
}

template <typename T>
std::vector<T> Tape<T>::grad_of(const Tensor<T>& t) const {
  GAPNET_REQUIRE(t.node >= 0, "tensor is not attached to this tape");
  GAPNET_CHECK(t.node < static_cast<int>(nodes_.size()), "node {} beyond tape", t.node);
  GAPNET_CHECK(nodes_[t.node].numel == t.numel(), "attached tensor size changed under the tape");
  if (grads_[t.node].empty()) return std::vector<T>(static_cast<size_t>(t.numel()), T(0));
  return grads_[t.node];
}

template class Tape<float>;
template class Tape<double>;

}  // namespace gapnet
