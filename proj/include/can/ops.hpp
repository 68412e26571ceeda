#pragma once

#include <cstddef>
#include <vector>

#include "can/tensor.hpp"

// Differentiable primitives. All take and return BasicTensor<T> for
// T in {float, double}; gradients flow to every operand that requires them.

namespace can {

// Elementwise with numpy-style right-aligned broadcasting.
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T s);
template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& x, T s);
template <typename T>
BasicTensor<T> broadcast_to(const BasicTensor<T>& x, const Shape& shape);

/// [..., m, k] x [..., k, n]. Leading dims must match, or either operand
/// may be a plain matrix shared across the other's leading dims.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Swaps the last two axes.
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape);
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::ptrdiff_t axis);
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::ptrdiff_t axis, std::size_t start,
                     std::size_t length);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope = T(0.2));
template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x);
/// Throws NumericError on negative input. Gradient at 0 is taken as 0.
template <typename T>
BasicTensor<T> sqrt(const BasicTensor<T>& x);

/// Softmax along `axis`. `mask`, when given, has the shape of a suffix of
/// x's shape ending at the last axis (which must then be `axis`); zero
/// entries are excluded and come out exactly 0.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::ptrdiff_t axis = -1,
                       const BasicTensor<T>* mask = nullptr);

/// Normalizes over the last axis, then applies gain and bias of that extent.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps = T(1e-5));

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::ptrdiff_t axis);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::ptrdiff_t axis);

/// Divides each last-axis row by its sum; all-zero rows stay zero.
template <typename T>
BasicTensor<T> row_normalize(const BasicTensor<T>& x);
/// D^-1/2 A D^-1/2 over the last two (square) axes, D = row sums.
template <typename T>
BasicTensor<T> sym_normalize(const BasicTensor<T>& x);

/// Throws NumericError naming `what` if any value is NaN or infinite.
template <typename T>
void ensure_finite(const BasicTensor<T>& x, const char* what);

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add(a, b);
}
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return sub(a, b);
}
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return mul(a, b);
}

}  // namespace can
