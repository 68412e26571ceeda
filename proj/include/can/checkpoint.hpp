#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "can/data.hpp"
#include "can/model.hpp"

namespace can {

/// Unreadable, truncated or incompatible checkpoint file.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// Preprocessing state needed to score new data with a trained model.
struct CheckpointMeta {
  std::vector<std::string> sensor_names;
  NormStats norm;
  std::size_t downsample = 1;
};

struct Checkpoint {
  CanModel<float> model;
  CheckpointMeta meta;
};

std::string model_config_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

/// Layout: u64 little-endian header length, JSON header
/// {format, version, config, meta, params: [{name, shape, offset}]}, then
/// raw little-endian float32 data; offsets are bytes into the data block.
void save_checkpoint(const CanModel<float>& model, const CheckpointMeta& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace can
