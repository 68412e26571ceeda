#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace can {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Incompatible operand shapes. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
};

class RankError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A softmax slice had every entry masked out.
class DegenerateMaskError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite value produced or a domain violation (sqrt of a negative).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into the parents' grad buffers.
  std::function<void(Node& self)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Gradient recording is enabled per thread. Scoped guard disables it.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Dense row-major tensor handle. Copies share the underlying node; values
/// produced by ops are never mutated afterwards. Leaves that require grad
/// (parameters) are updated in place by the optimizer.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeType = Node<T>;

  /// Undefined handle; `defined()` is false until assigned.
  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value);
  static BasicTensor scalar(T value);
  static BasicTensor identity(std::size_t n);

  /// Result of a differentiable op. Records `parents` and `backward` only
  /// when grad mode is on and some parent requires grad.
  static BasicTensor from_op(Shape shape, std::vector<T> values,
                             std::vector<BasicTensor> parents,
                             std::function<void(NodeType&)> backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::ptrdiff_t axis) const;

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::vector<T> to_vector() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  /// Fresh leaf holding a copy of the values; no history, no grad.
  BasicTensor detach() const;
  template <typename U>
  BasicTensor<U> cast() const;

  /// Reverse-mode sweep from this scalar. Leaf grads accumulate across
  /// calls; intermediate grads are reset at the start of every sweep.
  void backward() const;

  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  explicit BasicTensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}
  std::shared_ptr<NodeType> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
  std::vector<U> out(node_->value.begin(), node_->value.end());
  return BasicTensor<U>(node_->shape, std::move(out), node_->requires_grad);
}

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace can
