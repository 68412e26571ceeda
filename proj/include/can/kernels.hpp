#pragma once

#include <cstddef>

// Dense inner loops behind the tensor ops. Every kernel has a serial
// reference and an OpenMP variant; both produce bit-identical results since
// each output element is written by one thread with a fixed summation order.

namespace can::kernels {

/// Batched C[b] (+)= op(A[b]) * op(B[b]), row-major. op(A) is m x k and
/// op(B) is k x n. A stride of 0 shares that operand across the batch.
struct GemmSpec {
  std::size_t batch = 1;
  std::size_t m = 0, k = 0, n = 0;
  bool trans_a = false;
  bool trans_b = false;
  std::size_t stride_a = 0, stride_b = 0, stride_c = 0;
  bool accumulate = false;
};

/// Rows of length `len` laid out contiguously, `rows` of them.
struct RowSpec {
  std::size_t rows = 0;
  std::size_t len = 0;
};

namespace serial {
template <typename T>
void gemm(const GemmSpec& spec, const T* a, const T* b, T* c);
// mask (optional) has `mask_rows` rows of length len, reused cyclically.
template <typename T>
void softmax_rows(const RowSpec& spec, const T* x, const T* mask, std::size_t mask_rows,
                  T* y);
template <typename T>
void layer_norm_rows(const RowSpec& spec, const T* x, T eps, T* xhat, T* inv_std);
}  // namespace serial

namespace parallel {
template <typename T>
void gemm(const GemmSpec& spec, const T* a, const T* b, T* c);
template <typename T>
void softmax_rows(const RowSpec& spec, const T* x, const T* mask, std::size_t mask_rows,
                  T* y);
template <typename T>
void layer_norm_rows(const RowSpec& spec, const T* x, T eps, T* xhat, T* inv_std);
}  // namespace parallel

/// Picks the OpenMP kernel when the work is large enough to amortize a
/// parallel region, the serial one otherwise.
template <typename T>
void gemm(const GemmSpec& spec, const T* a, const T* b, T* c);
template <typename T>
void softmax_rows(const RowSpec& spec, const T* x, const T* mask, std::size_t mask_rows,
                  T* y);
template <typename T>
void layer_norm_rows(const RowSpec& spec, const T* x, T eps, T* xhat, T* inv_std);

/// Minimum multiply-adds before the dispatcher goes parallel.
inline constexpr std::size_t kParallelWork = 1 << 16;

/// Thread cap used by the parallel kernels (0 = OpenMP default).
void set_max_threads(int threads);
int max_threads();

}  // namespace can::kernels
