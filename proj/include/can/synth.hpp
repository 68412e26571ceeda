#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "can/data.hpp"

namespace can {

enum class AnomalyType { kSpike, kDrift, kStuck };

AnomalyType parse_anomaly_type(const std::string& name);
std::string to_string(AnomalyType type);

/// Injected test-split segment [start, start + duration).
struct AnomalySegment {
  std::size_t start = 0;
  std::size_t duration = 10;
  std::vector<std::size_t> sensors;
  AnomalyType type = AnomalyType::kSpike;
  double magnitude = 5.0;  // in units of the sensor's standard deviation
};

struct SynthConfig {
  std::size_t sensors = 5;
  std::size_t length = 2000;  // per split
  std::uint64_t seed = 0;
  std::size_t clusters = 0;   // 0 means ceil(sensors / 2)
  double noise = 0.05;        // relative to each sensor's amplitude
  double latent = 0.3;        // weight of the shared per-cluster random component
  std::vector<AnomalySegment> anomalies;
};

struct SynthResult {
  RawSeries train;
  RawSeries test;
  std::vector<std::size_t> cluster_of;  // sensor -> cluster
};

/// Sensors in one cluster share period, phase and a slow random component.
/// The test split continues the train split in time. Throws
/// std::invalid_argument for overlapping or out-of-range segments.
SynthResult synth_generate(const SynthConfig& config);

/// `count` non-overlapping segments spread over [margin, length), each on
/// one or two random sensors. Deterministic per seed.
std::vector<AnomalySegment> place_anomalies(std::size_t count, AnomalyType type, std::size_t sensors,
                                            std::size_t length, std::size_t duration, double magnitude,
                                            std::size_t margin, std::uint64_t seed);

/// {"clusters": [[...], ...], "sensor_cluster": [...], "edges": [[i, j], ...]}.
std::string truth_graph_json(const SynthResult& result);

}  // namespace can
