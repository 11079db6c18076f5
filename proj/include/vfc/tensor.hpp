// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "vfc/common.hpp"

namespace vfc {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

// Thread-local autodiff switch; inference paths disable graph capture.
inline bool& grad_mode() {
  thread_local bool on = true;
  return on;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> val;
  std::vector<T> grad; // allocated on first use
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  int64_t numel() const { return static_cast<int64_t>(val.size()); }

  T* grad_ptr() {
    if (grad.empty()) grad.assign(val.size(), T(0));
    return grad.data();
  }
};

} // namespace detail

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
};

inline bool grad_enabled() { return detail::grad_mode(); }

// Dense n-d tensor with reverse-mode gradients. Value-semantic handle to a
// shared node; ops build the graph only while grad mode is on and some input
// requires gradients.
template <class T>
class Tensor {
public:
  using Node = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape) {
    auto n = std::make_shared<Node>();
    n->val.assign(shape_numel(shape), T(0));
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, T v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->val.begin(), t.node_->val.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor from(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = std::move(data);
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }

  T* data() { return node_->val.data(); }
  const T* data() const { return node_->val.data(); }
  std::vector<T>& vec() { return node_->val; }
  const std::vector<T>& vec() const { return node_->val; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor " + shape_str(shape()));
    return node_->val[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    node_->requires_grad = b;
    return *this;
  }

  // Gradient buffer (allocated zero on first access). Tensor is a shared
  // handle, so gradient access is const in the shared_ptr sense.
  T* grad() const { return node_->grad_ptr(); }
  const std::vector<T>& grad_vec() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() const {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  std::shared_ptr<Node> node() const { return node_; }

  void fill_normal(Rng& rng, double stddev, double mean = 0.0) {
    for (auto& v : node_->val) v = static_cast<T>(mean + stddev * rng.normal());
  }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (auto& v : node_->val) v = static_cast<T>(rng.uniform(lo, hi));
  }

  bool all_finite() const {
    for (const T& v : node_->val)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Reverse-mode sweep from a scalar. Topological order via iterative DFS;
  // each node's closure scatters into its parents' grad buffers. Interior
  // buffers are released as soon as their gradient has been propagated,
  // which keeps the peak working set near the live frontier of the sweep.
  void backward() {
    if (numel() != 1) throw ShapeError("backward() requires a scalar loss");
    std::vector<std::shared_ptr<Node>> order; // shared: we prune parent links
    std::unordered_set<Node*> seen;
    std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack;
    stack.emplace_back(node_, 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        const std::shared_ptr<Node>& p = n->parents[idx++];
        if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = it->get();
      if (!n->backprop) continue;
      n->backprop(*n);
      // reverse-topological order: no later closure reads this interior
      // node, so its buffers and retained scratch go back to the heap now
      n->backprop = nullptr;
      n->parents.clear();
      std::vector<T>().swap(n->grad);
      if (n != node_.get()) std::vector<T>().swap(n->val);
    }
  }

private:
  std::shared_ptr<Node> node_;
};

// Graph-building helper: result tracks parents only when gradients can flow.
template <class T, class Inputs>
Tensor<T> make_op_from(Shape shape, std::vector<T> val, const Inputs& inputs,
                       std::function<void(detail::Node<T>&)> backprop) {
  auto n = std::make_shared<detail::Node<T>>();
  if (shape_numel(shape) != static_cast<int64_t>(val.size()))
    throw ShapeError("op result size mismatch for shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->val = std::move(val);
  if (grad_enabled()) {
    for (const auto& in : inputs)
      if (in.defined() && in.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    if (n->requires_grad) {
      for (const auto& in : inputs)
        if (in.defined()) n->parents.push_back(in.node());
      n->backprop = std::move(backprop);
    }
  }
  return Tensor<T>(std::move(n));
}

template <class T>
Tensor<T> make_op(Shape shape, std::vector<T> val,
                  std::initializer_list<Tensor<T>> inputs,
                  std::function<void(detail::Node<T>&)> backprop) {
  return make_op_from<T>(std::move(shape), std::move(val), inputs, std::move(backprop));
}

// Named trainable tensor; the name encodes the module path, e.g.
// "enc.block1.dwconv.weight".
template <class T>
struct Param {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
using ParamList = std::vector<Param<T>>;

template <class T>
inline void check_unique_names(const ParamList<T>& params) {
  std::unordered_set<std::string> seen;
  for (const auto& p : params)
    if (!seen.insert(p.name).second)
      throw ConfigError("duplicate parameter name: " + p.name);
}

} // namespace vfc
