#include "can/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "can/ops.hpp"

namespace can {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (sensors == 0) fail("sensors must be >= 1");
  if (window == 0) fail("window must be >= 1");
  if (layers == 0) fail("layers must be >= 1");
  if (heads == 0) fail("heads must be >= 1");
  if (d_model == 0 || d_model % heads != 0) {
    fail("d_model " + std::to_string(d_model) + " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (d_embed == 0) fail("d_embed must be >= 1");
  if (top_k == 0) fail("top_k must be >= 1");
  if (beta < 0.0 || beta > 1.0) fail("beta must lie in [0, 1]");
  for (auto w : ae_hidden) {
    if (w == 0) fail("autoencoder widths must be >= 1");
  }
}

namespace {

template <typename T>
BasicTensor<T> normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return BasicTensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
BasicTensor<T> fan_in(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return normal<T>({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

template <typename T>
BasicTensor<T> filled(std::size_t n, T value) {
  return BasicTensor<T>({n}, std::vector<T>(n, value), true);
}

template <typename T>
void push_attention(std::vector<std::pair<std::string, BasicTensor<T>>>& out, const std::string& prefix,
                    const AttentionParams<T>& a) {
  out.emplace_back(prefix + "w_q", a.w_q);
  out.emplace_back(prefix + "w_k", a.w_k);
  out.emplace_back(prefix + "w_v", a.w_v);
  out.emplace_back(prefix + "w_o", a.w_o);
}

template <typename T>
BasicTensor<T> layer_to_width(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  return add(matmul(x, w), b);
}

// [B, N, S] values -> [B, N, S, d_t] via the shared scalar projection.
template <typename T>
BasicTensor<T> project_values(const BasicTensor<T>& values, const CanModel<T>& model) {
  Shape s = values.shape();
  s.push_back(1);
  return add(matmul(reshape(values, s), model.input_w), model.input_b);
}

}  // namespace

template <typename T>
CanModel<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  CanModel<T> m;
  m.config = config;
  m.input_w = normal<T>({1, d}, 1.0, rng);
  m.input_b = filled<T>(d, T(0));
  m.positions = PositionalTable(config.seq_len(), d).rows<T>(config.seq_len());
  if (config.learned_positions) m.positions.set_requires_grad(true);
  m.embedding = init_embedding<T>(config.sensors, config.d_embed, rng);

  for (std::size_t i = 0; i < config.layers; ++i) {
    CamLayerParams<T> layer;
    layer.attention = init_attention<T>(d, config.heads, rng);
    if (config.graph_conv && config.local_graph) {
      layer.graph = init_graph_conv<T>(d, config.local_width(), config.seq_len(), config.beta, rng);
    } else {
      layer.graph.w_conv = fan_in<T>(d, d, rng);
      layer.graph.beta = config.beta;
    }
    layer.ln1_gain = filled<T>(d, T(1));
    layer.ln1_bias = filled<T>(d, T(0));
    layer.ln2_gain = filled<T>(d, T(1));
    layer.ln2_bias = filled<T>(d, T(0));
    m.encoder.push_back(std::move(layer));

    if (config.autoencoder) {
      BottleneckParams<T> ae;
      std::vector<std::size_t> widths{d};
      widths.insert(widths.end(), config.ae_hidden.begin(), config.ae_hidden.end());
      widths.push_back(d);
      for (std::size_t j = 0; j + 1 < widths.size(); ++j) {
        ae.weights.push_back(fan_in<T>(widths[j], widths[j + 1], rng));
        ae.biases.push_back(filled<T>(widths[j + 1], T(0)));
      }
      m.bottleneck.push_back(std::move(ae));
    }
  }

  auto make_decoder = [&](std::vector<DecoderLayerParams<T>>& out) {
    for (std::size_t i = 0; i < config.layers; ++i) {
      DecoderLayerParams<T> layer;
      layer.attention = init_attention<T>(d, config.heads, rng);
      layer.ln_gain = filled<T>(d, T(1));
      layer.ln_bias = filled<T>(d, T(0));
      out.push_back(std::move(layer));
    }
  };
  make_decoder(m.pred_decoder);
  m.pred_head_w = fan_in<T>(d, 1, rng);
  m.pred_head_b = filled<T>(1, T(0));
  if (config.rec_decoder) {
    make_decoder(m.rec_decoder);
    m.rec_head_w = fan_in<T>(d, 1, rng);
    m.rec_head_b = filled<T>(1, T(0));
  }
  return m;
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>>> CanModel<T>::named_parameters() const {
  std::vector<std::pair<std::string, BasicTensor<T>>> out;
  out.emplace_back("input.w", input_w);
  out.emplace_back("input.b", input_b);
  if (config.learned_positions) out.emplace_back("positions", positions);
  out.emplace_back("embedding", embedding);
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const auto p = "encoder." + std::to_string(i) + ".";
    const auto& layer = encoder[i];
    push_attention(out, p + "attn.", layer.attention);
    if (layer.graph.w_local.defined()) out.emplace_back(p + "graph.w_local", layer.graph.w_local);
    if (layer.graph.c.defined()) out.emplace_back(p + "graph.c", layer.graph.c);
    out.emplace_back(p + "graph.w_conv", layer.graph.w_conv);
    out.emplace_back(p + "ln1.gain", layer.ln1_gain);
    out.emplace_back(p + "ln1.bias", layer.ln1_bias);
    out.emplace_back(p + "ln2.gain", layer.ln2_gain);
    out.emplace_back(p + "ln2.bias", layer.ln2_bias);
  }
  for (std::size_t i = 0; i < bottleneck.size(); ++i) {
    for (std::size_t j = 0; j < bottleneck[i].weights.size(); ++j) {
      const auto p = "ae." + std::to_string(i) + "." + std::to_string(j) + ".";
      out.emplace_back(p + "w", bottleneck[i].weights[j]);
      out.emplace_back(p + "b", bottleneck[i].biases[j]);
    }
  }
  auto push_decoder = [&](const std::string& name, const std::vector<DecoderLayerParams<T>>& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto p = name + "." + std::to_string(i) + ".";
      push_attention(out, p + "attn.", layers[i].attention);
      out.emplace_back(p + "ln.gain", layers[i].ln_gain);
      out.emplace_back(p + "ln.bias", layers[i].ln_bias);
    }
  };
  push_decoder("pred_decoder", pred_decoder);
  out.emplace_back("pred_head.w", pred_head_w);
  out.emplace_back("pred_head.b", pred_head_b);
  if (!rec_decoder.empty()) {
    push_decoder("rec_decoder", rec_decoder);
    out.emplace_back("rec_head.w", rec_head_w);
    out.emplace_back("rec_head.b", rec_head_b);
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> CanModel<T>::parameters() const {
  std::vector<BasicTensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t CanModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

template <typename T, typename U>
void copy_parameters(const CanModel<T>& src, CanModel<U>& dst) {
  const auto a = src.named_parameters();
  auto b = dst.named_parameters();
  if (a.size() != b.size()) throw std::invalid_argument("copy_parameters: architectures differ");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) {
      throw ShapeError("copy_parameters " + a[i].first, a[i].second.shape(), b[i].second.shape());
    }
    auto from = a[i].second.data();
    auto to = b[i].second.mutable_data();
    for (std::size_t k = 0; k < from.size(); ++k) to[k] = static_cast<U>(from[k]);
  }
}

template <typename T>
SensorGraph<T> build_graph(const CanModel<T>& model) {
  return build_sensor_graph(model.embedding, model.config.top_k, model.config.graph_norm);
}

template <typename T>
BasicTensor<T> embed_inputs(const BasicTensor<T>& x, const CanModel<T>& model) {
  const auto& c = model.config;
  if (x.rank() != 3 || x.dim(1) != c.sensors || x.dim(2) != c.window) {
    throw ShapeError("embed_inputs", x.shape(), Shape{0, c.sensors, c.window});
  }
  const auto placeholder = BasicTensor<T>::zeros({x.dim(0), c.sensors, 1});
  const auto seq = concat<T>({x, placeholder}, -1);
  return add(project_values(seq, model), model.positions);
}

template <typename T>
BasicTensor<T> cam_forward(const BasicTensor<T>& h, const CamLayerParams<T>& layer, const SensorGraph<T>& graph,
                           const ModelConfig& config) {
  const auto h1 = layer_norm(add(h, multi_head_attention(h, layer.attention, false)), layer.ln1_gain, layer.ln1_bias);
  BasicTensor<T> conv;
  if (config.graph_conv) {
    BasicTensor<T> a_local;
    if (config.local_graph) a_local = local_adjacency(h1, layer.graph);
    conv = global_local_conv(h1, graph, a_local, layer.graph);
  } else {
    conv = matmul(h1, layer.graph.w_conv);
  }
  return layer_norm(add(h1, conv), layer.ln2_gain, layer.ln2_bias);
}

template <typename T>
EncoderOutput<T> encoder_forward(const BasicTensor<T>& x, const CanModel<T>& model, const SensorGraph<T>& graph) {
  EncoderOutput<T> out;
  auto h = embed_inputs(x, model);
  const std::size_t last = model.config.window;
  for (const auto& layer : model.encoder) {
    h = cam_forward(h, layer, graph, model.config);
    out.h_layers.push_back(h);
    out.xe_layers.push_back(slice(h, -2, last, 1));
  }
  return out;
}

template <typename T>
BasicTensor<T> bottleneck_ae(const BasicTensor<T>& xe, const BottleneckParams<T>& params) {
  auto h = xe;
  for (std::size_t j = 0; j < params.weights.size(); ++j) {
    h = layer_to_width(h, params.weights[j], params.biases[j]);
    if (j + 1 < params.weights.size()) h = relu(h);
  }
  return h;
}

template <typename T>
BasicTensor<T> decoder_forward(const BasicTensor<T>& seed, const std::vector<BasicTensor<T>>& xe_layers,
                               const std::vector<DecoderLayerParams<T>>& layers, std::size_t crop_len) {
  if (xe_layers.size() != layers.size()) {
    throw std::invalid_argument("decoder_forward: " + std::to_string(xe_layers.size()) + " embeddings for " +
                                std::to_string(layers.size()) + " layers");
  }
  auto h = seed;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = concat<T>({xe_layers[i], h}, -2);
    h = layer_norm(add(h, multi_head_attention(h, layers[i].attention, true)), layers[i].ln_gain, layers[i].ln_bias);
  }
  const std::size_t len = h.dim(-2);
  if (crop_len == 0 || crop_len > len) {
    throw std::out_of_range("decoder_forward: crop of " + std::to_string(crop_len) + " from " + std::to_string(len) +
                            " slots");
  }
  return slice(h, -2, len - crop_len, crop_len);
}

template <typename T>
ForwardOutput<T> can_forward(const BasicTensor<T>& x_in, const CanModel<T>& model) {
  const bool single = x_in.rank() == 2;
  if (!single && x_in.rank() != 3) throw RankError("can_forward expects [N, K] or [B, N, K], got " + to_string(x_in.shape()));
  const auto x = single ? reshape(x_in, {1, x_in.dim(0), x_in.dim(1)}) : x_in;
  const auto& c = model.config;
  const std::size_t batch = x.dim(0);
  const std::size_t k = c.window;

  const auto graph = build_graph(model);
  auto enc = encoder_forward(x, model, graph);
  ForwardOutput<T> out;
  for (std::size_t i = 0; i < enc.xe_layers.size(); ++i) {
    out.xe_layers.push_back(c.autoencoder ? bottleneck_ae(enc.xe_layers[i], model.bottleneck[i]) : enc.xe_layers[i]);
  }

  // Placeholder X_0 at position K seeds the one-step prediction.
  const auto zero = BasicTensor<T>::zeros({batch, c.sensors, 1});
  const auto pred_seed = add(project_values(zero, model), slice(model.positions, 0, k, 1));
  const auto pred = decoder_forward(pred_seed, out.xe_layers, model.pred_decoder, 1);
  auto y_pred = add(matmul(pred, model.pred_head_w), model.pred_head_b);
  out.y_pred = reshape(y_pred, single ? Shape{c.sensors} : Shape{batch, c.sensors});

  if (c.rec_decoder) {
    // {X_0, x_0 .. x_{K-2}} at positions 0..K-1, one step behind the target.
    auto shifted = k > 1 ? concat<T>({zero, slice(x, -1, 0, k - 1)}, -1) : zero;
    const auto rec_seed = add(project_values(shifted, model), slice(model.positions, 0, 0, k));
    const auto rec = decoder_forward(rec_seed, out.xe_layers, model.rec_decoder, k);
    auto y_rec = add(matmul(rec, model.rec_head_w), model.rec_head_b);
    out.y_rec = reshape(y_rec, single ? Shape{c.sensors, k} : Shape{batch, c.sensors, k});
  }
  return out;
}

#define CAN_INSTANTIATE_MODEL(T)                                                                          \
  template struct CanModel<T>;                                                                            \
  template CanModel<T> init_model<T>(const ModelConfig&, std::uint64_t);                                  \
  template SensorGraph<T> build_graph(const CanModel<T>&);                                                \
  template BasicTensor<T> embed_inputs(const BasicTensor<T>&, const CanModel<T>&);                        \
  template BasicTensor<T> cam_forward(const BasicTensor<T>&, const CamLayerParams<T>&, const SensorGraph<T>&, \
                                      const ModelConfig&);                                                \
  template EncoderOutput<T> encoder_forward(const BasicTensor<T>&, const CanModel<T>&, const SensorGraph<T>&); \
  template BasicTensor<T> bottleneck_ae(const BasicTensor<T>&, const BottleneckParams<T>&);               \
  template BasicTensor<T> decoder_forward(const BasicTensor<T>&, const std::vector<BasicTensor<T>>&,      \
                                          const std::vector<DecoderLayerParams<T>>&, std::size_t);        \
  template ForwardOutput<T> can_forward(const BasicTensor<T>&, const CanModel<T>&);

CAN_INSTANTIATE_MODEL(float)
CAN_INSTANTIATE_MODEL(double)

template void copy_parameters(const CanModel<float>&, CanModel<float>&);
template void copy_parameters(const CanModel<float>&, CanModel<double>&);
template void copy_parameters(const CanModel<double>&, CanModel<float>&);
template void copy_parameters(const CanModel<double>&, CanModel<double>&);

#undef CAN_INSTANTIATE_MODEL

}  // namespace can
