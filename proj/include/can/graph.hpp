#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "can/tensor.hpp"

namespace can {

enum class GraphNorm { kRow, kSymmetric };

GraphNorm parse_graph_norm(const std::string& name);
std::string to_string(GraphNorm norm);

/// Global graph state derived from the sensor embeddings for one step.
template <typename T>
struct SensorGraph {
  BasicTensor<T> global;       // Relu(E E^T), [N, N], symmetric, >= 0
  BasicTensor<T> global_norm;  // normalized global graph
  BasicTensor<T> mask;         // 0/1 top-k_m selector, [N, N], no gradient
  std::size_t top_k = 0;
};

/// Local-graph attention and propagation weights of one coupled layer.
template <typename T>
struct GraphConvParams {
  BasicTensor<T> w_local;  // [d, d_s]
  BasicTensor<T> c;        // [2 * L * d_s]
  BasicTensor<T> w_conv;   // [d, d_out]
  double beta = 0.8;       // share of the node's own state kept
};

template <typename T>
GraphConvParams<T> init_graph_conv(std::size_t d_model, std::size_t d_local, std::size_t seq_len,
                                   double beta, std::mt19937_64& rng);

/// N(0, 1) / sqrt(d_e) entries, one row per sensor.
template <typename T>
BasicTensor<T> init_embedding(std::size_t sensors, std::size_t d_embed, std::mt19937_64& rng);

template <typename T>
BasicTensor<T> global_adjacency(const BasicTensor<T>& embedding);

/// Row i holds ones at the k_m largest entries of a_global[i, :]; equal
/// values go to the lower column index. k_m >= N selects every column.
template <typename T>
BasicTensor<T> topk_mask(const BasicTensor<T>& a_global, std::size_t k_m);

/// Row-stochastic (default) or symmetric-degree normalization.
template <typename T>
BasicTensor<T> normalize_global(const BasicTensor<T>& a_global, GraphNorm norm = GraphNorm::kRow);

template <typename T>
SensorGraph<T> build_sensor_graph(const BasicTensor<T>& embedding, std::size_t k_m,
                                  GraphNorm norm = GraphNorm::kRow);

/// Attention coefficients between sensors for the current window.
/// h: [..., N, L, d] -> [..., N, N], each row a softmax over neighbours j.
template <typename T>
BasicTensor<T> local_adjacency(const BasicTensor<T>& h, const GraphConvParams<T>& params,
                               T leaky_slope = T(0.2));

/// mask * (a_local + a_global_norm), elementwise. a_local may be undefined
/// (default-constructed) to drop the local term.
template <typename T>
BasicTensor<T> combine_graphs(const BasicTensor<T>& mask, const BasicTensor<T>& a_local,
                              const BasicTensor<T>& a_global_norm);

/// (beta H + (1 - beta) A H) W, with A mixing the sensor axis at every
/// timestamp and channel. h: [..., N, L, d]; a: [N, N] or [..., N, N].
template <typename T>
BasicTensor<T> propagate(const BasicTensor<T>& h, const BasicTensor<T>& a,
                         const BasicTensor<T>& w_conv, double beta);

/// Full global-local convolution of one coupled layer.
template <typename T>
BasicTensor<T> global_local_conv(const BasicTensor<T>& h, const SensorGraph<T>& graph,
                                 const BasicTensor<T>& a_local, const GraphConvParams<T>& params);

}  // namespace can
