#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "can/tensor.hpp"

namespace can {

/// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// N sensors over L timestamps, row-major [N x L].
struct RawSeries {
  std::vector<std::string> sensor_names;
  std::vector<double> values;
  std::vector<std::string> timestamps;  // empty when the file had none
  std::vector<int> labels;              // empty unless labelled

  std::size_t sensors() const { return sensor_names.size(); }
  std::size_t length() const { return sensors() == 0 ? 0 : values.size() / sensors(); }
  double at(std::size_t sensor, std::size_t t) const { return values[sensor * length() + t]; }
  double& at(std::size_t sensor, std::size_t t) { return values[sensor * length() + t]; }
  bool has_labels() const { return !labels.empty(); }
};

/// Header row of sensor names with optional `timestamp` and `label`
/// columns. Errors name the data row (1-based, header excluded), the file
/// line and the column.
RawSeries load_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const RawSeries& series);

/// Per-sensor median of each block of `factor` timestamps (a trailing
/// partial block is kept). Labels take the block maximum.
RawSeries downsample_median(const RawSeries& series, std::size_t factor);

struct NormStats {
  std::vector<double> min;
  std::vector<double> max;
};

NormStats minmax_fit(const RawSeries& train);
/// (x - min) / (max - min), unclipped; constant sensors map to 0.
RawSeries minmax_apply(const RawSeries& series, const NormStats& stats);

/// Stride-1 windows: window j pairs history columns [j, j+K) with target
/// column j+K.
struct WindowedDataset {
  std::size_t sensors = 0;
  std::size_t window = 0;
  std::vector<float> history;  // [W, N, K]
  std::vector<float> targets;  // [W, N]
  std::vector<int> labels;     // label of each target column, empty if unlabelled

  std::size_t size() const { return window == 0 ? 0 : targets.size() / sensors; }
  /// Gathers windows `indices` into ([B, N, K], [B, N]).
  std::pair<Tensor, Tensor> batch(const std::vector<std::size_t>& indices) const;
  WindowedDataset subset(std::size_t begin, std::size_t count) const;
};

WindowedDataset make_windows(const RawSeries& series, std::size_t window);

/// History-only windows [j, j+K) for j in [begin, begin+count), as [count, N, K].
/// The last valid start is L-K.
Tensor history_windows(const RawSeries& series, std::size_t window, std::size_t begin, std::size_t count);

}  // namespace can
