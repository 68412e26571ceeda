#include "can/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "can/kernels.hpp"

namespace can {

namespace {

std::size_t norm_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw RankError("axis " + std::to_string(axis) + " out of range for rank " +
                    std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
  return st;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da == db || db == 1) {
      out[i] = da;
    } else if (da == 1) {
      out[i] = db;
    } else {
      throw ShapeError(op, a, b);
    }
  }
  return out;
}

// Strides of `x` expressed over the axes of `out`; 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& x, const Shape& out) {
  const auto st = contiguous_strides(x);
  std::vector<std::size_t> res(out.size(), 0);
  const std::size_t off = out.size() - x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    res[off + i] = x[i] == 1 ? 0 : st[i];
  }
  return res;
}

// Odometer walk over `out`, yielding (flat, offset_a, offset_b).
template <typename F>
void for_each_index(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t n = numel(out);
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <typename T, typename Fwd, typename GradA, typename GradB>
BasicTensor<T> binary(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b,
                      Fwd fwd, GradA grad_a, GradB grad_b) {
  const auto& av = a.data();
  const auto& bv = b.data();
  if (a.shape() == b.shape()) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, [=](Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      const auto& g = self.grad;
      if (pa.requires_grad) {
        auto& ga = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += grad_a(pa.value[i], pb.value[i], g[i]);
      }
      if (pb.requires_grad) {
        auto& gb = pb.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += grad_b(pa.value[i], pb.value[i], g[i]);
      }
    });
  }
  Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<T> out(numel(out_shape));
  for_each_index(out_shape, sa, sb,
                 [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
  return BasicTensor<T>::from_op(
      out_shape, std::move(out), {a, b}, [=](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
          auto& ga = pa.ensure_grad();
          for_each_index(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            ga[ia] += grad_a(pa.value[ia], pb.value[ib], g[i]);
          });
        }
        if (pb.requires_grad) {
          auto& gb = pb.ensure_grad();
          for_each_index(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            gb[ib] += grad_b(pa.value[ia], pb.value[ib], g[i]);
          });
        }
      });
}

// y = f(x) elementwise; dfdx(x, y) gives the local derivative.
template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary(const BasicTensor<T>& x, Fwd fwd, Deriv dfdx) {
  const auto& xv = x.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {x}, [=](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& gp = p.ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      gp[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
    }
  });
}

// Pure data movement: out[i] = x[src[i]].
template <typename T>
BasicTensor<T> gather(const BasicTensor<T>& x, Shape out_shape, std::vector<std::size_t> src) {
  const auto& xv = x.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xv[src[i]];
  return BasicTensor<T>::from_op(std::move(out_shape), std::move(out), {x},
                                 [src = std::move(src)](Node<T>& self) {
                                   auto& gp = self.parents[0]->ensure_grad();
                                   for (std::size_t i = 0; i < src.size(); ++i) {
                                     gp[src[i]] += self.grad[i];
                                   }
                                 });
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return g; });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return -g; });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
      [](T x, T, T g) { return g * x; });
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, T s) {
  return unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& x, T s) {
  return unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
BasicTensor<T> broadcast_to(const BasicTensor<T>& x, const Shape& shape) {
  if (broadcast_shape("broadcast_to", x.shape(), shape) != shape) {
    throw ShapeError("broadcast_to", x.shape(), shape);
  }
  if (x.shape() == shape) return x;
  auto sx = broadcast_strides(x.shape(), shape);
  std::vector<std::size_t> src(numel(shape));
  for_each_index(shape, sx, sx, [&](std::size_t i, std::size_t ix, std::size_t) { src[i] = ix; });
  return gather(x, shape, std::move(src));
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k) throw ShapeError("matmul", a.shape(), b.shape());
  const Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  const Shape lead_b(b.shape().begin(), b.shape().end() - 2);

  enum class Mode { kSame, kSharedRight, kSharedLeft } mode;
  Shape lead;
  if (lead_a == lead_b) {
    mode = Mode::kSame;
    lead = lead_a;
  } else if (lead_b.empty()) {
    mode = Mode::kSharedRight;
    lead = lead_a;
  } else if (lead_a.empty()) {
    mode = Mode::kSharedLeft;
    lead = lead_b;
  } else {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t batch = numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<T> out(batch * m * n);
  kernels::GemmSpec spec;
  if (mode == Mode::kSharedRight) {
    // Rows of every batch entry are contiguous: one tall gemm.
    spec.m = batch * m;
    spec.k = k;
    spec.n = n;
  } else {
    spec.batch = batch;
    spec.m = m;
    spec.k = k;
    spec.n = n;
    spec.stride_a = mode == Mode::kSharedLeft ? 0 : m * k;
    spec.stride_b = k * n;
    spec.stride_c = m * n;
  }
  kernels::gemm(spec, a.data().data(), b.data().data(), out.data());

  return BasicTensor<T>::from_op(
      out_shape, std::move(out), {a, b}, [=](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T* g = self.grad.data();
        if (pa.requires_grad) {
          // dA = dC * B^T
          T* ga = pa.ensure_grad().data();
          if (mode == Mode::kSharedLeft) {
            for (std::size_t bi = 0; bi < batch; ++bi) {
              kernels::GemmSpec s{1, m, n, k, false, true, 0, 0, 0, true};
              kernels::gemm(s, g + bi * m * n, pb.value.data() + bi * k * n, ga);
            }
          } else {
            kernels::GemmSpec s = spec;
            s.k = n;
            s.n = k;
            s.trans_b = true;
            s.accumulate = true;
            s.stride_a = spec.stride_c;
            s.stride_b = spec.stride_b;
            s.stride_c = spec.stride_a;
            kernels::gemm(s, g, pb.value.data(), ga);
          }
        }
        if (pb.requires_grad) {
          // dB = A^T * dC
          T* gb = pb.ensure_grad().data();
          if (mode == Mode::kSharedRight) {
            kernels::GemmSpec s{1, k, batch * m, n, true, false, 0, 0, 0, true};
            kernels::gemm(s, pa.value.data(), g, gb);
          } else {
            kernels::GemmSpec s{batch, k, m, n, true, false, spec.stride_a, m * n, k * n, true};
            kernels::gemm(s, pa.value.data(), g, gb);
          }
        }
      });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw RankError("permute: axes do not match rank of " + to_string(x.shape()));
  std::vector<bool> used(r, false);
  for (auto ax : axes) {
    if (ax >= r || used[ax]) throw RankError("permute: invalid axis list");
    used[ax] = true;
  }
  const auto st = contiguous_strides(x.shape());
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t d = 0; d < r; ++d) {
    out_shape[d] = x.shape()[axes[d]];
    src_strides[d] = st[axes[d]];
  }
  std::vector<std::size_t> src(x.size());
  for_each_index(out_shape, src_strides, src_strides,
                 [&](std::size_t i, std::size_t is, std::size_t) { src[i] = is; });
  return gather(x, std::move(out_shape), std::move(src));
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  if (x.rank() < 2) throw RankError("transpose needs rank >= 2, got " + to_string(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.size()) throw ShapeError("reshape", x.shape(), shape);
  return BasicTensor<T>::from_op(shape, x.to_vector(), {x}, [](Node<T>& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i];
  });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::ptrdiff_t axis_in) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t axis = norm_axis(axis_in, first.size());
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat", first, p.shape());
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.shape()[d] != first[d]) throw ShapeError("concat", first, p.shape());
    }
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t row = p.shape()[axis] * inner;
    const auto& pv = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * row, row, out.begin() + o * out_row + off);
    }
    off += row;
  }
  return BasicTensor<T>::from_op(out_shape, std::move(out), parts, [=](Node<T>& self) {
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& p = *self.parents[pi];
      if (!p.requires_grad) continue;
      auto& gp = p.ensure_grad();
      const std::size_t row = p.shape[axis] * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < row; ++j) gp[o * row + j] += self.grad[o * out_row + offsets[pi] + j];
      }
    }
  });
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::ptrdiff_t axis_in, std::size_t start,
                     std::size_t length) {
  const std::size_t axis = norm_axis(axis_in, x.rank());
  const std::size_t extent = x.shape()[axis];
  if (length == 0 || start + length > extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range on axis " + std::to_string(axis) + " of " +
                     to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<std::size_t> src;
  src.reserve(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < length * inner; ++j) {
      src.push_back(o * extent * inner + start * inner + j);
    }
  }
  return gather(x, std::move(out_shape), std::move(src));
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope) {
  return unary(
      x, [slope](T v) { return v >= T(0) ? v : slope * v; },
      [slope](T v, T) { return v >= T(0) ? T(1) : slope; });
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
BasicTensor<T> sqrt(const BasicTensor<T>& x) {
  for (auto v : x.data()) {
    if (v < T(0)) throw NumericError("sqrt of negative value " + std::to_string(v));
  }
  return unary(
      x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::ptrdiff_t axis_in, const BasicTensor<T>* mask) {
  const std::size_t axis = norm_axis(axis_in, x.rank());
  if (axis + 1 != x.rank()) {
    if (mask) throw std::invalid_argument("softmax: a mask requires the last axis");
    std::vector<std::size_t> perm(x.rank());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[axis], perm.back());
    return permute(softmax<T>(permute(x, perm), -1, nullptr), perm);
  }
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.size() / len;
  std::size_t mask_rows = 0;
  if (mask) {
    const Shape& ms = mask->shape();
    const bool suffix = ms.size() >= 1 && ms.size() <= x.rank() &&
                        std::equal(ms.begin(), ms.end(), x.shape().end() - ms.size());
    if (!suffix) throw ShapeError("softmax mask", x.shape(), ms);
    mask_rows = mask->size() / len;
  }
  std::vector<T> out(x.size());
  kernels::softmax_rows(kernels::RowSpec{rows, len}, x.data().data(),
                        mask ? mask->data().data() : nullptr, mask_rows, out.data());
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {x}, [=](Node<T>& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * len;
      const T* g = self.grad.data() + r * len;
      T dot = T(0);
      for (std::size_t j = 0; j < len; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < len; ++j) gp[r * len + j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps) {
  const std::size_t len = x.shape().back();
  if (gain.size() != len || bias.size() != len) throw ShapeError("layer_norm", x.shape(), gain.shape());
  const std::size_t rows = x.size() / len;
  std::vector<T> xhat(x.size());
  std::vector<T> inv_std(rows);
  kernels::layer_norm_rows(kernels::RowSpec{rows, len}, x.data().data(), eps, xhat.data(),
                           inv_std.data());
  std::vector<T> out(x.size());
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = xhat[r * len + j] * gv[j] + bv[j];
  }
  return BasicTensor<T>::from_op(
      x.shape(), std::move(out), {x, gain, bias},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& g = self.grad;
        if (pg.requires_grad || pb.requires_grad) {
          auto& gg = pg.ensure_grad();
          auto& gb = pb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < len; ++j) {
              gg[j] += g[r * len + j] * xhat[r * len + j];
              gb[j] += g[r * len + j];
            }
          }
        }
        if (px.requires_grad) {
          auto& gx = px.ensure_grad();
          std::vector<T> dxhat(len);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t j = 0; j < len; ++j) {
              dxhat[j] = g[r * len + j] * pg.value[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[r * len + j];
            }
            mean_d /= static_cast<T>(len);
            mean_dx /= static_cast<T>(len);
            for (std::size_t j = 0; j < len; ++j) {
              gx[r * len + j] += inv_std[r] * (dxhat[j] - mean_d - xhat[r * len + j] * mean_dx);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T s = T(0);
  for (auto v : x.data()) s += v;
  return BasicTensor<T>::from_op(Shape{}, {s}, {x}, [](Node<T>& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (auto& v : gp) v += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x, std::ptrdiff_t axis_in) {
  const std::size_t axis = norm_axis(axis_in, x.rank());
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  const std::size_t len = x.shape()[axis];
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(outer * inner, T(0));
  const auto& xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + j) * inner + i];
    }
  }
  return BasicTensor<T>::from_op(out_shape, std::move(out), {x}, [=](Node<T>& self) {
    auto& gp = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < len; ++j) {
        for (std::size_t i = 0; i < inner; ++i) gp[(o * len + j) * inner + i] += self.grad[o * inner + i];
      }
    }
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x, std::ptrdiff_t axis) {
  const std::size_t len = x.dim(axis);
  return mul_scalar(sum(x, axis), T(1) / static_cast<T>(len));
}

template <typename T>
BasicTensor<T> row_normalize(const BasicTensor<T>& x) {
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.size() / len;
  const auto& xv = x.data();
  std::vector<T> out(x.size(), T(0));
  std::vector<T> sums(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < len; ++j) sums[r] += xv[r * len + j];
    if (sums[r] == T(0)) continue;
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = xv[r * len + j] / sums[r];
  }
  return BasicTensor<T>::from_op(x.shape(), std::move(out), {x},
                                 [=, sums = std::move(sums)](Node<T>& self) {
                                   auto& gp = self.parents[0]->ensure_grad();
                                   for (std::size_t r = 0; r < rows; ++r) {
                                     if (sums[r] == T(0)) continue;
                                     const T* y = self.value.data() + r * len;
                                     const T* g = self.grad.data() + r * len;
                                     T dot = T(0);
                                     for (std::size_t j = 0; j < len; ++j) dot += g[j] * y[j];
                                     for (std::size_t j = 0; j < len; ++j) {
                                       gp[r * len + j] += (g[j] - dot) / sums[r];
                                     }
                                   }
                                 });
}

template <typename T>
BasicTensor<T> sym_normalize(const BasicTensor<T>& x) {
  if (x.rank() < 2 || x.dim(-1) != x.dim(-2)) throw ShapeError("sym_normalize", x.shape(), x.shape());
  const std::size_t n = x.shape().back();
  const std::size_t batch = x.size() / (n * n);
  const auto& xv = x.data();
  std::vector<T> deg(batch * n, T(0));
  std::vector<T> out(x.size(), T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    const T* a = xv.data() + b * n * n;
    T* d = deg.data() + b * n;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) d[i] += a[i * n + j];
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (d[i] > T(0) && d[j] > T(0)) out[b * n * n + i * n + j] = a[i * n + j] / std::sqrt(d[i] * d[j]);
      }
    }
  }
  return BasicTensor<T>::from_op(
      x.shape(), std::move(out), {x}, [=, deg = std::move(deg)](Node<T>& self) {
        auto& gp = self.parents[0]->ensure_grad();
        std::vector<T> gdeg(n);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* d = deg.data() + b * n;
          const T* y = self.value.data() + b * n * n;
          const T* g = self.grad.data() + b * n * n;
          std::fill(gdeg.begin(), gdeg.end(), T(0));
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const T gy = g[i * n + j] * y[i * n + j];
              gdeg[i] += gy;
              gdeg[j] += gy;
            }
          }
          for (std::size_t i = 0; i < n; ++i) {
            if (d[i] <= T(0)) continue;
            const T gd = T(-0.5) * gdeg[i] / d[i];
            for (std::size_t j = 0; j < n; ++j) {
              T direct = T(0);
              if (d[j] > T(0)) direct = g[i * n + j] / std::sqrt(d[i] * d[j]);
              gp[b * n * n + i * n + j] += direct + gd;
            }
          }
        }
      });
}

template <typename T>
void ensure_finite(const BasicTensor<T>& x, const char* what) {
  for (auto v : x.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

#define CAN_INSTANTIATE_OPS(T)                                                                 \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, T);                                \
  template BasicTensor<T> mul_scalar(const BasicTensor<T>&, T);                                \
  template BasicTensor<T> broadcast_to(const BasicTensor<T>&, const Shape&);                   \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                    \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);     \
  template BasicTensor<T> reshape(const BasicTensor<T>&, const Shape&);                        \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::ptrdiff_t);          \
  template BasicTensor<T> slice(const BasicTensor<T>&, std::ptrdiff_t, std::size_t,            \
                                std::size_t);                                                  \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, T);                                \
  template BasicTensor<T> square(const BasicTensor<T>&);                                       \
  template BasicTensor<T> sqrt(const BasicTensor<T>&);                                         \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::ptrdiff_t, const BasicTensor<T>*); \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                     const BasicTensor<T>&, T);                                \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                          \
  template BasicTensor<T> sum(const BasicTensor<T>&, std::ptrdiff_t);                          \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                         \
  template BasicTensor<T> mean(const BasicTensor<T>&, std::ptrdiff_t);                         \
  template BasicTensor<T> row_normalize(const BasicTensor<T>&);                                \
  template BasicTensor<T> sym_normalize(const BasicTensor<T>&);                                \
  template void ensure_finite(const BasicTensor<T>&, const char*);

CAN_INSTANTIATE_OPS(float)
CAN_INSTANTIATE_OPS(double)

#undef CAN_INSTANTIATE_OPS

}  // namespace can
