#include "can/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "can/ops.hpp"

namespace can {

namespace {

template <typename T>
BasicTensor<T> random_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return BasicTensor<T>({rows, cols}, std::move(v), true);
}

// [..., L, H*d] -> [..., H, L, d]
template <typename T>
BasicTensor<T> split_heads(const BasicTensor<T>& x, std::size_t heads) {
  Shape s = x.shape();
  const std::size_t width = s.back();
  s.back() = heads;
  s.push_back(width / heads);
  auto r = reshape(x, s);
  const std::size_t rank = s.size();
  std::vector<std::size_t> axes(rank);
  for (std::size_t i = 0; i < rank; ++i) axes[i] = i;
  std::swap(axes[rank - 3], axes[rank - 2]);
  return permute(r, axes);
}

// [..., H, L, d] -> [..., L, H*d]
template <typename T>
BasicTensor<T> merge_heads(const BasicTensor<T>& x) {
  const std::size_t rank = x.rank();
  std::vector<std::size_t> axes(rank);
  for (std::size_t i = 0; i < rank; ++i) axes[i] = i;
  std::swap(axes[rank - 3], axes[rank - 2]);
  auto p = permute(x, axes);
  Shape s = p.shape();
  const std::size_t d = s.back();
  s.pop_back();
  s.back() *= d;
  return reshape(p, s);
}

}  // namespace

template <typename T>
void AttentionParams<T>::validate() const {
  if (heads == 0) throw ShapeError("attention: head count must be >= 1");
  if (w_q.shape() != w_k.shape()) throw ShapeError("attention W_q/W_k", w_q.shape(), w_k.shape());
  if (w_q.rank() != 2 || w_v.rank() != 2 || w_o.rank() != 2) {
    throw ShapeError("attention: projections must be matrices");
  }
  if (w_v.dim(0) != w_q.dim(0)) throw ShapeError("attention W_q/W_v", w_q.shape(), w_v.shape());
  if (w_q.dim(1) % heads != 0 || w_v.dim(1) % heads != 0) {
    throw ShapeError("attention: projection width not divisible by " + std::to_string(heads) +
                     " heads");
  }
  if (w_o.dim(0) != w_v.dim(1)) throw ShapeError("attention W_v/W_o", w_v.shape(), w_o.shape());
}

template <typename T>
AttentionParams<T> init_attention(std::size_t d_model, std::size_t heads, std::mt19937_64& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw ShapeError("attention: d_model " + std::to_string(d_model) +
                     " not divisible by head count " + std::to_string(heads));
  }
  const double s = 1.0 / std::sqrt(static_cast<double>(d_model));
  AttentionParams<T> p;
  p.heads = heads;
  p.w_q = random_matrix<T>(d_model, d_model, s, rng);
  p.w_k = random_matrix<T>(d_model, d_model, s, rng);
  p.w_v = random_matrix<T>(d_model, d_model, s, rng);
  p.w_o = random_matrix<T>(d_model, d_model, s, rng);
  return p;
}

template <typename T>
QueryKeyValue<T> project_qkv(const BasicTensor<T>& h, const AttentionParams<T>& p, std::size_t head) {
  if (head >= p.heads) {
    throw std::out_of_range("head " + std::to_string(head) + " of " + std::to_string(p.heads));
  }
  const std::size_t dk = p.d_k(), dv = p.d_v();
  return {matmul(h, slice(p.w_q, 1, head * dk, dk)), matmul(h, slice(p.w_k, 1, head * dk, dk)),
          matmul(h, slice(p.w_v, 1, head * dv, dv))};
}

template <typename T>
BasicTensor<T> causal_mask(std::size_t len) {
  std::vector<T> m(len * len, T(0));
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m[i * len + j] = T(1);
  }
  return BasicTensor<T>({len, len}, std::move(m));
}

template <typename T>
BasicTensor<T> scaled_dot_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                    const BasicTensor<T>& v, bool causal) {
  if (q.dim(-1) != k.dim(-1)) throw ShapeError("attention Q/K", q.shape(), k.shape());
  const T scale = T(1) / std::sqrt(static_cast<T>(q.dim(-1)));
  auto scores = mul_scalar(matmul(q, transpose(k)), scale);
  BasicTensor<T> weights;
  if (causal) {
    if (q.dim(-2) != k.dim(-2)) throw ShapeError("causal attention Q/K", q.shape(), k.shape());
    const auto mask = causal_mask<T>(q.dim(-2));
    weights = softmax(scores, -1, &mask);
  } else {
    weights = softmax(scores, -1);
  }
  return matmul(weights, v);
}

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& h, const AttentionParams<T>& p, bool causal) {
  if (h.rank() < 2 || h.dim(-1) != p.d_model()) throw ShapeError("multi_head_attention", h.shape(), p.w_q.shape());
  auto q = split_heads(matmul(h, p.w_q), p.heads);
  auto k = split_heads(matmul(h, p.w_k), p.heads);
  auto v = split_heads(matmul(h, p.w_v), p.heads);
  return matmul(merge_heads(scaled_dot_attention(q, k, v, causal)), p.w_o);
}

PositionalTable::PositionalTable(std::size_t max_len, std::size_t d_model)
    : max_len_(max_len), d_model_(d_model), table_(max_len * d_model) {
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t c = 0; c < d_model; ++c) {
      const std::size_t pair = c / 2;
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, 2.0 * static_cast<double>(pair) / static_cast<double>(d_model));
      table_[pos * d_model + c] = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
}

template <typename T>
BasicTensor<T> PositionalTable::rows(std::size_t seq_len) const {
  if (seq_len > max_len_ || seq_len == 0) {
    throw std::out_of_range("positional table holds " + std::to_string(max_len_) +
                            " positions, requested " + std::to_string(seq_len));
  }
  std::vector<T> v(table_.begin(), table_.begin() + static_cast<std::ptrdiff_t>(seq_len * d_model_));
  return BasicTensor<T>({seq_len, d_model_}, std::move(v));
}

template <typename T>
BasicTensor<T> positional_encoding(std::size_t seq_len, std::size_t d_model) {
  return PositionalTable(seq_len, d_model).rows<T>(seq_len);
}

#define CAN_INSTANTIATE_ATTENTION(T)                                                              \
  template struct AttentionParams<T>;                                                             \
  template AttentionParams<T> init_attention<T>(std::size_t, std::size_t, std::mt19937_64&);     \
  template QueryKeyValue<T> project_qkv(const BasicTensor<T>&, const AttentionParams<T>&,         \
                                        std::size_t);                                             \
  template BasicTensor<T> scaled_dot_attention(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                               const BasicTensor<T>&, bool);                      \
  template BasicTensor<T> multi_head_attention(const BasicTensor<T>&, const AttentionParams<T>&,  \
                                               bool);                                             \
  template BasicTensor<T> causal_mask<T>(std::size_t);                                            \
  template BasicTensor<T> PositionalTable::rows<T>(std::size_t) const;                            \
  template BasicTensor<T> positional_encoding<T>(std::size_t, std::size_t);

CAN_INSTANTIATE_ATTENTION(float)
CAN_INSTANTIATE_ATTENTION(double)

#undef CAN_INSTANTIATE_ATTENTION

}  // namespace can
