#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace minnet {

// Dense n-d array with optional gradient buffer. Values are row-major,
// NCHW for 4-d feature maps. Tensors are treated as immutable once they
// have been produced by an operation; the gradient buffer is the only
// part mutated afterwards (by Tape::backward).
template <class T>
struct TensorImpl {
  std::vector<int64_t> shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
  bool tracked = false;  // produced under an active tape on a grad path

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
  }
};

template <class T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<int64_t> shape, T fill = T(0), bool requires_grad = false) {
    impl = std::make_shared<TensorImpl<T>>();
    validate_shape(shape);
    impl->shape = std::move(shape);
    impl->values.assign(static_cast<size_t>(impl->numel()), fill);
    impl->requires_grad = requires_grad;
  }

  static TensorT zeros(std::vector<int64_t> shape, bool requires_grad = false) {
    return TensorT(std::move(shape), T(0), requires_grad);
  }

  static TensorT from_values(std::vector<int64_t> shape, std::vector<T> values,
                             bool requires_grad = false) {
    TensorT t;
    t.impl = std::make_shared<TensorImpl<T>>();
    validate_shape(shape);
    t.impl->shape = std::move(shape);
    if (static_cast<int64_t>(values.size()) != t.impl->numel())
      throw std::invalid_argument("tensor: value count does not match shape");
    t.impl->values = std::move(values);
    t.impl->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return impl != nullptr; }
  const std::vector<int64_t>& shape() const { return impl->shape; }
  int64_t dim(size_t i) const { return impl->shape.at(i); }
  size_t rank() const { return impl->shape.size(); }
  int64_t numel() const { return impl->numel(); }

  T* data() { return impl->values.data(); }
  const T* data() const { return impl->values.data(); }
  std::vector<T>& values() { return impl->values; }
  const std::vector<T>& values() const { return impl->values; }

  bool requires_grad() const { return impl->requires_grad; }
  void set_requires_grad(bool v) { impl->requires_grad = v; }
  bool has_grad() const { return !impl->grad.empty(); }
  std::vector<T>& grad() {
    impl->ensure_grad();
    return impl->grad;
  }
  const std::vector<T>& grad() const { return impl->grad; }
  void zero_grad() {
    if (!impl->grad.empty()) impl->grad.assign(impl->values.size(), T(0));
  }

  // Deep copy of values only (fresh impl, no grad, not tracked).
  TensorT clone() const {
    TensorT t;
    t.impl = std::make_shared<TensorImpl<T>>();
    t.impl->shape = impl->shape;
    t.impl->values = impl->values;
    t.impl->requires_grad = impl->requires_grad;
    return t;
  }

  std::shared_ptr<TensorImpl<T>> impl;

 private:
  static void validate_shape(const std::vector<int64_t>& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor: rank-0 shapes not supported");
    for (int64_t e : shape)
      if (e <= 0) throw std::invalid_argument("tensor: extents must be positive");
  }
};

// Records one operation per node, in execution order (topological by
// construction). One backward traversal populates the grads of exactly
// the tensors on the path to requires_grad leaves. A tape is confined to
// one training step and one executor.
template <class T>
class TapeT {
 public:
  struct Node {
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    std::shared_ptr<TensorImpl<T>> output;
    std::function<void()> backward;
  };

  static TapeT*& current() {
    thread_local TapeT* cur = nullptr;
    return cur;
  }

  void record(std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
              std::shared_ptr<TensorImpl<T>> output, std::function<void()> backward) {
    output->tracked = true;
    nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
  }

  // Seeds d(root)/d(root) = 1 and walks the tape in reverse. root must be
  // a scalar (use ops::sum to reduce first).
  void backward(const TensorT<T>& root) {
    if (root.numel() != 1) throw std::invalid_argument("backward: root must be a scalar");
    root.impl->ensure_grad();
    root.impl->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->output->grad.empty()) continue;  // no gradient flowed here
      it->backward();
    }
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

template <class T>
class TapeScope {
 public:
  explicit TapeScope(TapeT<T>& tape) : prev_(TapeT<T>::current()) {
    TapeT<T>::current() = &tape;
  }
  ~TapeScope() { TapeT<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  TapeT<T>* prev_;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

}  // namespace minnet
