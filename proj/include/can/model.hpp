#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "can/attention.hpp"
#include "can/graph.hpp"
#include "can/tensor.hpp"

namespace can {

/// Architecture hyperparameters and ablation switches.
struct ModelConfig {
  std::size_t sensors = 1;      // N
  std::size_t window = 5;       // K
  std::size_t layers = 3;       // M, shared by encoder and both decoders
  std::size_t heads = 8;        // h
  std::size_t d_model = 32;     // d_t
  std::size_t d_embed = 10;     // d_e
  std::size_t d_local = 0;      // d_s; 0 means d_model
  std::size_t top_k = 10;       // k_m
  double beta = 0.8;
  std::vector<std::size_t> ae_hidden{8, 4, 8};
  GraphNorm graph_norm = GraphNorm::kRow;
  bool learned_positions = false;

  bool local_graph = true;
  bool graph_conv = true;
  bool autoencoder = true;
  bool rec_decoder = true;

  std::size_t seq_len() const { return window + 1; }
  std::size_t local_width() const { return d_local == 0 ? d_model : d_local; }
  /// Throws std::invalid_argument describing the first bad field.
  void validate() const;
};

template <typename T>
struct CamLayerParams {
  AttentionParams<T> attention;
  GraphConvParams<T> graph;  // w_local/c undefined when the local graph is off
  BasicTensor<T> ln1_gain, ln1_bias;
  BasicTensor<T> ln2_gain, ln2_bias;
};

/// Fully connected stack d_t -> hidden... -> d_t.
template <typename T>
struct BottleneckParams {
  std::vector<BasicTensor<T>> weights;
  std::vector<BasicTensor<T>> biases;
};

template <typename T>
struct DecoderLayerParams {
  AttentionParams<T> attention;
  BasicTensor<T> ln_gain, ln_bias;
};

template <typename T>
struct CanModel {
  ModelConfig config;
  BasicTensor<T> input_w;    // [1, d_t]
  BasicTensor<T> input_b;    // [d_t]
  BasicTensor<T> positions;  // [K+1, d_t]; a parameter only when learned
  BasicTensor<T> embedding;  // [N, d_e]
  std::vector<CamLayerParams<T>> encoder;
  std::vector<BottleneckParams<T>> bottleneck;  // one per encoder layer, empty without AE
  std::vector<DecoderLayerParams<T>> pred_decoder;
  std::vector<DecoderLayerParams<T>> rec_decoder;  // empty without the reconstruction decoder
  BasicTensor<T> pred_head_w, pred_head_b;  // [d_t, 1], [1]
  BasicTensor<T> rec_head_w, rec_head_b;

  /// Trainable tensors in a fixed order. Handles share storage with the model.
  std::vector<std::pair<std::string, BasicTensor<T>>> named_parameters() const;
  std::vector<BasicTensor<T>> parameters() const;
  std::size_t parameter_count() const;

  /// Same architecture with every value converted to U.
  template <typename U>
  CanModel<U> cast() const;
};

template <typename T>
CanModel<T> init_model(const ModelConfig& config, std::uint64_t seed);

/// Copies values from `src` into `dst` parameter by parameter. Both must
/// share the configuration.
template <typename T, typename U>
void copy_parameters(const CanModel<T>& src, CanModel<U>& dst);

template <typename T>
struct ForwardOutput {
  BasicTensor<T> y_pred;                 // [B, N] or [N]
  BasicTensor<T> y_rec;                  // [B, N, K] or [N, K]; undefined without the decoder
  std::vector<BasicTensor<T>> xe_layers; // [B, N, 1, d_t] per encoder layer, after the AE
};

template <typename T>
SensorGraph<T> build_graph(const CanModel<T>& model);

/// [B, N, K] window history -> [B, N, K+1, d_t] encoder input with the
/// zero placeholder at the last slot and positions added.
template <typename T>
BasicTensor<T> embed_inputs(const BasicTensor<T>& x, const CanModel<T>& model);

/// One coupled layer on [B, N, L, d_t].
template <typename T>
BasicTensor<T> cam_forward(const BasicTensor<T>& h, const CamLayerParams<T>& layer, const SensorGraph<T>& graph,
                           const ModelConfig& config);

template <typename T>
struct EncoderOutput {
  std::vector<BasicTensor<T>> h_layers;   // [B, N, K+1, d_t]
  std::vector<BasicTensor<T>> xe_layers;  // placeholder slice, [B, N, 1, d_t]
};

template <typename T>
EncoderOutput<T> encoder_forward(const BasicTensor<T>& x, const CanModel<T>& model, const SensorGraph<T>& graph);

/// d_t -> 8 -> 4 -> 8 -> d_t, ReLU between layers, linear output.
template <typename T>
BasicTensor<T> bottleneck_ae(const BasicTensor<T>& xe, const BottleneckParams<T>& params);

/// Prepends xe_layers[i] at slot 0 before causal layer i; keeps the last
/// `crop_len` slots of the final sequence.
template <typename T>
BasicTensor<T> decoder_forward(const BasicTensor<T>& seed, const std::vector<BasicTensor<T>>& xe_layers,
                               const std::vector<DecoderLayerParams<T>>& layers, std::size_t crop_len);

/// x: [N, K] or [B, N, K].
template <typename T>
ForwardOutput<T> can_forward(const BasicTensor<T>& x, const CanModel<T>& model);

template <typename T>
template <typename U>
CanModel<U> CanModel<T>::cast() const {
  auto out = init_model<U>(config, 0);
  copy_parameters(*this, out);
  return out;
}

}  // namespace can
