#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "can/detection.hpp"
#include "can/train.hpp"

namespace can {

/// Bad command line, flag value or configuration key.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a batch run can configure.
struct RunConfig {
  TrainConfig train;
  DetectConfig detect;
  std::size_t downsample = 1;
  bool seed_set = false;
};

using Settings = std::vector<std::pair<std::string, std::string>>;

/// `key = value` lines; blank lines and lines starting with '#' are skipped.
Settings parse_settings(const std::string& text, const std::string& source);
Settings load_settings(const std::filesystem::path& path);

/// Every accepted key, sorted.
std::vector<std::string> config_keys();

/// Throws UsageError for unknown keys (listing the valid ones) or values
/// that do not parse.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
void apply_settings(RunConfig& config, const Settings& settings);

/// no-local-graph | no-graph-conv | no-ae | no-rec-decoder | none
void apply_ablation(ModelConfig& config, const std::string& name);

/// Resolved configuration, one `key = value` per line in key order.
std::string describe(const RunConfig& config);

}  // namespace can
