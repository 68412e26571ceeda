#include "can/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "can/ops.hpp"

namespace can {

GraphNorm parse_graph_norm(const std::string& name) {
  if (name == "row") return GraphNorm::kRow;
  if (name == "symmetric" || name == "sym") return GraphNorm::kSymmetric;
  throw std::invalid_argument("unknown graph normalization '" + name + "' (expected row|symmetric)");
}

std::string to_string(GraphNorm norm) { return norm == GraphNorm::kRow ? "row" : "symmetric"; }

namespace {

template <typename T>
BasicTensor<T> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return BasicTensor<T>(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
GraphConvParams<T> init_graph_conv(std::size_t d_model, std::size_t d_local, std::size_t seq_len,
                                   double beta, std::mt19937_64& rng) {
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("beta must lie in [0, 1]");
  GraphConvParams<T> p;
  const double fan_c = static_cast<double>(2 * seq_len * d_local);
  p.w_local = normal_tensor<T>({d_model, d_local}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  p.c = normal_tensor<T>({2 * seq_len * d_local}, 1.0 / std::sqrt(fan_c), rng);
  p.w_conv = normal_tensor<T>({d_model, d_model}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  p.beta = beta;
  return p;
}

template <typename T>
BasicTensor<T> init_embedding(std::size_t sensors, std::size_t d_embed, std::mt19937_64& rng) {
  return normal_tensor<T>({sensors, d_embed}, 1.0 / std::sqrt(static_cast<double>(d_embed)), rng);
}

template <typename T>
BasicTensor<T> global_adjacency(const BasicTensor<T>& embedding) {
  if (embedding.rank() != 2) throw RankError("embedding must be [N, d_e], got " + to_string(embedding.shape()));
  return relu(matmul(embedding, transpose(embedding)));
}

template <typename T>
BasicTensor<T> topk_mask(const BasicTensor<T>& a_global, std::size_t k_m) {
  if (a_global.rank() != 2 || a_global.dim(0) != a_global.dim(1)) {
    throw ShapeError("topk_mask expects a square matrix, got " + to_string(a_global.shape()));
  }
  if (k_m == 0) throw std::invalid_argument("topk_mask: k_m must be >= 1");
  const std::size_t n = a_global.dim(0);
  const std::size_t k = std::min(k_m, n);
  const auto a = a_global.data();
  std::vector<T> mask(n * n, T(0));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const T* row = a.data() + i * n;
    std::stable_sort(idx.begin(), idx.end(), [row](std::size_t x, std::size_t y) { return row[x] > row[y]; });
    for (std::size_t r = 0; r < k; ++r) mask[i * n + idx[r]] = T(1);
  }
  return BasicTensor<T>({n, n}, std::move(mask));
}

template <typename T>
BasicTensor<T> normalize_global(const BasicTensor<T>& a_global, GraphNorm norm) {
  return norm == GraphNorm::kRow ? row_normalize(a_global) : sym_normalize(a_global);
}

template <typename T>
SensorGraph<T> build_sensor_graph(const BasicTensor<T>& embedding, std::size_t k_m, GraphNorm norm) {
  SensorGraph<T> g;
  g.global = global_adjacency(embedding);
  g.global_norm = normalize_global(g.global, norm);
  g.mask = topk_mask(g.global, k_m);
  g.top_k = k_m;
  return g;
}

template <typename T>
BasicTensor<T> local_adjacency(const BasicTensor<T>& h, const GraphConvParams<T>& params, T leaky_slope) {
  if (h.rank() < 3) throw RankError("local_adjacency expects [..., N, L, d], got " + to_string(h.shape()));
  if (h.dim(-1) != params.w_local.dim(0)) throw ShapeError("local_adjacency H/W", h.shape(), params.w_local.shape());
  const std::size_t len = h.dim(-2);
  const std::size_t ds = params.w_local.dim(1);
  const std::size_t flat = len * ds;
  if (params.c.size() != 2 * flat) {
    throw ShapeError("local_adjacency: c has " + std::to_string(params.c.size()) + " entries, expected " +
                     std::to_string(2 * flat));
  }
  auto v = matmul(h, params.w_local);
  Shape vs(h.shape().begin(), h.shape().end() - 2);
  vs.push_back(flat);
  v = reshape(v, vs);  // [..., N, L*d_s]
  const auto c1 = reshape(slice(params.c, 0, 0, flat), {flat, 1});
  const auto c2 = reshape(slice(params.c, 0, flat, flat), {flat, 1});
  // c . [v_i || v_j] = c1 . v_i + c2 . v_j
  auto logits = add(matmul(v, c1), transpose(matmul(v, c2)));
  return softmax(leaky_relu(logits, leaky_slope), -1);
}

template <typename T>
BasicTensor<T> combine_graphs(const BasicTensor<T>& mask, const BasicTensor<T>& a_local,
                              const BasicTensor<T>& a_global_norm) {
  if (!a_local.defined()) return mul(mask, a_global_norm);
  return mul(add(a_local, a_global_norm), mask);
}

template <typename T>
BasicTensor<T> propagate(const BasicTensor<T>& h, const BasicTensor<T>& a, const BasicTensor<T>& w_conv,
                         double beta) {
  if (h.rank() < 3) throw RankError("propagate expects [..., N, L, d], got " + to_string(h.shape()));
  const std::size_t n = h.dim(-3);
  if (a.rank() < 2 || a.dim(-1) != n || a.dim(-2) != n) throw ShapeError("propagate A/H", a.shape(), h.shape());
  Shape flat(h.shape().begin(), h.shape().end() - 2);
  flat.push_back(h.dim(-2) * h.dim(-1));
  const auto mixed = reshape(matmul(a, reshape(h, flat)), h.shape());
  const auto blend = add(mul_scalar(h, static_cast<T>(beta)), mul_scalar(mixed, static_cast<T>(1.0 - beta)));
  return matmul(blend, w_conv);
}

template <typename T>
BasicTensor<T> global_local_conv(const BasicTensor<T>& h, const SensorGraph<T>& graph,
                                 const BasicTensor<T>& a_local, const GraphConvParams<T>& params) {
  const auto a = combine_graphs(graph.mask, a_local, graph.global_norm);
  return propagate(h, a, params.w_conv, params.beta);
}

#define CAN_INSTANTIATE_GRAPH(T)                                                                        \
  template GraphConvParams<T> init_graph_conv<T>(std::size_t, std::size_t, std::size_t, double,        \
                                                 std::mt19937_64&);                                     \
  template BasicTensor<T> init_embedding<T>(std::size_t, std::size_t, std::mt19937_64&);               \
  template BasicTensor<T> global_adjacency(const BasicTensor<T>&);                                     \
  template BasicTensor<T> topk_mask(const BasicTensor<T>&, std::size_t);                               \
  template BasicTensor<T> normalize_global(const BasicTensor<T>&, GraphNorm);                          \
  template SensorGraph<T> build_sensor_graph(const BasicTensor<T>&, std::size_t, GraphNorm);           \
  template BasicTensor<T> local_adjacency(const BasicTensor<T>&, const GraphConvParams<T>&, T);        \
  template BasicTensor<T> combine_graphs(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                         const BasicTensor<T>&);                                       \
  template BasicTensor<T> propagate(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                    double);                                                           \
  template BasicTensor<T> global_local_conv(const BasicTensor<T>&, const SensorGraph<T>&,              \
                                            const BasicTensor<T>&, const GraphConvParams<T>&);

CAN_INSTANTIATE_GRAPH(float)
CAN_INSTANTIATE_GRAPH(double)

#undef CAN_INSTANTIATE_GRAPH

}  // namespace can
