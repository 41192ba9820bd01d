#include "magma/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include <fmt/format.h>

namespace magma {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  return fmt::format("({})", fmt::join(shape, ", "));
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

namespace detail {

template <typename T>
std::vector<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad;
}

template <typename T>
void Node<T>::accumulate(std::span<const T> g) {
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<T>>()) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError(fmt::format("tensor extents must be positive, got {}", shape_str(shape)));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_str(shape), shape_numel(shape),
                                 data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
  const auto& s = shape();
  int r = static_cast<int>(s.size());
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(fmt::format("axis {} out of range for {}", axis, shape_str(s)));
  return s[static_cast<std::size_t>(a)];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return node_ ? node_->data.size() : 0;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) throw Error("use of undefined tensor");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError(fmt::format("item() on tensor of shape {}", shape_str(shape())));
  return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  if (!node_) throw Error("use of undefined tensor");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw Error("tensor has no gradient");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), node_->data, false);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  using NodeT = detail::Node<T>;
  if (!loss.defined()) throw Error("backward on undefined tensor");
  if (loss.numel() != 1) throw ShapeError(fmt::format("backward needs a scalar loss, got {}", shape_str(loss.shape())));
  auto root = loss.node();
  if (root->backward_done) throw Error("backward called twice on the same graph without a fresh forward pass");
  if (!root->requires_grad) throw Error("loss does not depend on any tensor that requires grad");

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Release the graph; leaves keep their gradients.
  for (NodeT* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
      if (node != root.get()) node->grad.clear();
    }
  }
  root->backward_done = true;
}

template class Tensor<float>;
template class Tensor<double>;
template struct detail::Node<float>;
template struct detail::Node<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace magma
