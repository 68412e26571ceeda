#include "can/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "can/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace can::kernels {

namespace {

// One output row of one batch entry. Shared by both variants so the
// arithmetic (and therefore the rounding) is identical.
template <typename T>
inline void gemm_row(const GemmSpec& s, const T* a, const T* b, T* c, std::size_t i) {
  T* crow = c + i * s.n;
  if (!s.accumulate) std::fill(crow, crow + s.n, T(0));
  if (!s.trans_a && !s.trans_b) {
    const T* arow = a + i * s.k;
    for (std::size_t p = 0; p < s.k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  } else if (!s.trans_a && s.trans_b) {
    const T* arow = a + i * s.k;
    for (std::size_t j = 0; j < s.n; ++j) {
      const T* brow = b + j * s.k;
      T acc = T(0);
      for (std::size_t p = 0; p < s.k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  } else if (s.trans_a && !s.trans_b) {
    for (std::size_t p = 0; p < s.k; ++p) {
      const T av = a[p * s.m + i];
      const T* brow = b + p * s.n;
      for (std::size_t j = 0; j < s.n; ++j) crow[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < s.n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < s.k; ++p) acc += a[p * s.m + i] * b[j * s.k + p];
      crow[j] += acc;
    }
  }
}

template <typename T>
inline void softmax_row(std::size_t len, const T* x, const T* mask, T* y) {
  T mx = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < len; ++j) {
    if (mask && mask[j] == T(0)) continue;
    mx = std::max(mx, x[j]);
    any = true;
  }
  if (!any) throw DegenerateMaskError("softmax: every entry of a slice is masked");
  T sum = T(0);
  for (std::size_t j = 0; j < len; ++j) {
    if (mask && mask[j] == T(0)) {
      y[j] = T(0);
      continue;
    }
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const T inv = T(1) / sum;
  for (std::size_t j = 0; j < len; ++j) y[j] *= inv;
}

template <typename T>
inline void layer_norm_row(std::size_t len, const T* x, T eps, T* xhat, T* inv_std) {
  T mean = T(0);
  for (std::size_t j = 0; j < len; ++j) mean += x[j];
  mean /= static_cast<T>(len);
  T var = T(0);
  for (std::size_t j = 0; j < len; ++j) {
    const T d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<T>(len);
  const T is = T(1) / std::sqrt(var + eps);
  *inv_std = is;
  for (std::size_t j = 0; j < len; ++j) xhat[j] = (x[j] - mean) * is;
}

int g_max_threads = 0;

}  // namespace

void set_max_threads(int threads) {
  g_max_threads = std::max(0, threads);
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif
}

int max_threads() {
#ifdef _OPENMP
  return g_max_threads > 0 ? g_max_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

template <typename T>
void gemm(const GemmSpec& spec, const T* a, const T* b, T* c) {
  for (std::size_t bi = 0; bi < spec.batch; ++bi) {
    const T* ab = a + bi * spec.stride_a;
    const T* bb = b + bi * spec.stride_b;
    T* cb = c + bi * spec.stride_c;
    for (std::size_t i = 0; i < spec.m; ++i) gemm_row(spec, ab, bb, cb, i);
  }
}

template <typename T>
void softmax_rows(const RowSpec& spec, const T* x, const T* mask, std::size_t mask_rows,
                  T* y) {
  for (std::size_t r = 0; r < spec.rows; ++r) {
    const T* m = mask ? mask + (r % mask_rows) * spec.len : nullptr;
    softmax_row(spec.len, x + r * spec.len, m, y + r * spec.len);
  }
}

template <typename T>
void layer_norm_rows(const RowSpec& spec, const T* x, T eps, T* xhat, T* inv_std) {
  for (std::size_t r = 0; r < spec.rows; ++r) {
    layer_norm_row(spec.len, x + r * spec.len, eps, xhat + r * spec.len, inv_std + r);
  }
}

}  // namespace serial

namespace parallel {

template <typename T>
void gemm(const GemmSpec& spec, const T* a, const T* b, T* c) {
  const auto total = static_cast<std::ptrdiff_t>(spec.batch * spec.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < total; ++r) {
    const auto bi = static_cast<std::size_t>(r) / spec.m;
    const auto i = static_cast<std::size_t>(r) % spec.m;
    gemm_row(spec, a + bi * spec.stride_a, b + bi * spec.stride_b, c + bi * spec.stride_c, i);
  }
}

template <typename T>
void softmax_rows(const RowSpec& spec, const T* x, const T* mask, std::size_t mask_rows,
                  T* y) {
  const auto rows = static_cast<std::ptrdiff_t>(spec.rows);
  bool degenerate = false;
#pragma omp parallel for schedule(static) reduction(|| : degenerate)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    const T* m = mask ? mask + (ur % mask_rows) * spec.len : nullptr;
    try {
      softmax_row(spec.len, x + ur * spec.len, m, y + ur * spec.len);
    } catch (const DegenerateMaskError&) {
      degenerate = true;
    }
  }
  if (degenerate) throw DegenerateMaskError("softmax: every entry of a slice is masked");
}

template <typename T>
void layer_norm_rows(const RowSpec& spec, const T* x, T eps, T* xhat, T* inv_std) {
  const auto rows = static_cast<std::ptrdiff_t>(spec.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    layer_norm_row(spec.len, x + ur * spec.len, eps, xhat + ur * spec.len, inv_std + ur);
  }
}

}  // namespace parallel

namespace {
inline bool go_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelWork && max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}
}  // namespace

template <typename T>
void gemm(const GemmSpec& spec, const T* a, const T* b, T* c) {
  if (go_parallel(spec.batch * spec.m * spec.k * spec.n)) {
    parallel::gemm(spec, a, b, c);
  } else {
    serial::gemm(spec, a, b, c);
  }
}

template <typename T>
void softmax_rows(const RowSpec& spec, const T* x, const T* mask, std::size_t mask_rows,
                  T* y) {
  if (go_parallel(spec.rows * spec.len * 8)) {
    parallel::softmax_rows(spec, x, mask, mask_rows, y);
  } else {
    serial::softmax_rows(spec, x, mask, mask_rows, y);
  }
}

template <typename T>
void layer_norm_rows(const RowSpec& spec, const T* x, T eps, T* xhat, T* inv_std) {
  if (go_parallel(spec.rows * spec.len * 8)) {
    parallel::layer_norm_rows(spec, x, eps, xhat, inv_std);
  } else {
    serial::layer_norm_rows(spec, x, eps, xhat, inv_std);
  }
}

#define CAN_INSTANTIATE_KERNELS(T)                                                       \
  template void serial::gemm<T>(const GemmSpec&, const T*, const T*, T*);                \
  template void parallel::gemm<T>(const GemmSpec&, const T*, const T*, T*);              \
  template void gemm<T>(const GemmSpec&, const T*, const T*, T*);                        \
  template void serial::softmax_rows<T>(const RowSpec&, const T*, const T*, std::size_t, \
                                        T*);                                             \
  template void parallel::softmax_rows<T>(const RowSpec&, const T*, const T*,            \
                                          std::size_t, T*);                              \
  template void softmax_rows<T>(const RowSpec&, const T*, const T*, std::size_t, T*);    \
  template void serial::layer_norm_rows<T>(const RowSpec&, const T*, T, T*, T*);         \
  template void parallel::layer_norm_rows<T>(const RowSpec&, const T*, T, T*, T*);       \
  template void layer_norm_rows<T>(const RowSpec&, const T*, T, T*, T*);

CAN_INSTANTIATE_KERNELS(float)
CAN_INSTANTIATE_KERNELS(double)

#undef CAN_INSTANTIATE_KERNELS

}  // namespace can::kernels
