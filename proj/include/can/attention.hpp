#pragma once

#include <cstddef>
#include <random>

#include "can/tensor.hpp"

namespace can {

/// Per-layer temporal self-attention weights. Head i owns columns
/// [i*d_k, (i+1)*d_k) of w_q/w_k and [i*d_v, (i+1)*d_v) of w_v. The same
/// weights serve every sensor's sequence in the layer.
template <typename T>
struct AttentionParams {
  std::size_t heads = 1;
  BasicTensor<T> w_q;  // [d_t, heads*d_k]
  BasicTensor<T> w_k;  // [d_t, heads*d_k]
  BasicTensor<T> w_v;  // [d_t, heads*d_v]
  BasicTensor<T> w_o;  // [heads*d_v, d_t]

  std::size_t d_model() const { return w_q.dim(0); }
  std::size_t d_k() const { return w_q.dim(1) / heads; }
  std::size_t d_v() const { return w_v.dim(1) / heads; }
  /// Throws ShapeError when the four matrices disagree.
  void validate() const;
};

/// Weights drawn from N(0, 1/fan_in); d_k = d_v = d_model / heads.
template <typename T>
AttentionParams<T> init_attention(std::size_t d_model, std::size_t heads, std::mt19937_64& rng);

template <typename T>
struct QueryKeyValue {
  BasicTensor<T> q, k, v;
};

/// Bias-free projections of `h` ([..., L, d_t]) for one head.
template <typename T>
QueryKeyValue<T> project_qkv(const BasicTensor<T>& h, const AttentionParams<T>& p, std::size_t head);

/// Softmax(Q K^T / sqrt(d_k)) V over the last two axes. With `causal`,
/// position t attends to positions <= t only.
template <typename T>
BasicTensor<T> scaled_dot_attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                    const BasicTensor<T>& v, bool causal);

/// All heads at once: concat(head_1..head_h) W_o, shape-preserving on
/// [..., L, d_t]. Leading axes (batch, sensor) are independent sequences.
template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& h, const AttentionParams<T>& p, bool causal);

/// Lower-triangular ones, [len, len].
template <typename T>
BasicTensor<T> causal_mask(std::size_t len);

/// Fixed sinusoidal table: (pos, 2i) = sin(pos / 10000^(2i/d)),
/// (pos, 2i+1) = cos of the same angle.
class PositionalTable {
 public:
  PositionalTable(std::size_t max_len, std::size_t d_model);

  std::size_t max_len() const { return max_len_; }
  std::size_t d_model() const { return d_model_; }
  /// First `seq_len` rows. Throws std::out_of_range past max_len.
  template <typename T>
  BasicTensor<T> rows(std::size_t seq_len) const;

 private:
  std::size_t max_len_;
  std::size_t d_model_;
  std::vector<double> table_;
};

template <typename T>
BasicTensor<T> positional_encoding(std::size_t seq_len, std::size_t d_model);

}  // namespace can
