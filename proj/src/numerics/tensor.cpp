#include "can/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace can {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + to_string(a) + " and " +
                            to_string(b)) {}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<NodeType>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor has a zero extent: " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + to_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  const auto n = numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{}, std::vector<T>{value});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::identity(std::size_t n) {
  std::vector<T> v(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = T(1);
  return BasicTensor({n, n}, std::move(v));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_op(Shape shape, std::vector<T> values,
                                       std::vector<BasicTensor> parents,
                                       std::function<void(NodeType&)> backward) {
  BasicTensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto& node = *out.node_;
  node.requires_grad = true;
  node.parents.reserve(parents.size());
  for (auto& p : parents) node.parents.push_back(p.node_);
  node.backward_fn = std::move(backward);
  return out;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw RankError("axis " + std::to_string(axis) + " out of range for shape " +
                    to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  node_->grad.clear();
}

template <typename T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw RankError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw RankError("index rank " + std::to_string(index.size()) + " for shape " +
                    to_string(shape()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw std::out_of_range("tensor index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->value);
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (size() != 1) {
    throw RankError("backward() requires a scalar loss, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<NodeType*> order;
  std::unordered_set<NodeType*> seen;
  std::vector<std::pair<NodeType*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeType* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace can
