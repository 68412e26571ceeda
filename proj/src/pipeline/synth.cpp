#include "can/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace can {

AnomalyType parse_anomaly_type(const std::string& name) {
  if (name == "spike") return AnomalyType::kSpike;
  if (name == "drift") return AnomalyType::kDrift;
  if (name == "stuck") return AnomalyType::kStuck;
  throw std::invalid_argument("unknown anomaly type '" + name + "' (expected spike|drift|stuck)");
}

std::string to_string(AnomalyType type) {
  switch (type) {
    case AnomalyType::kSpike: return "spike";
    case AnomalyType::kDrift: return "drift";
    case AnomalyType::kStuck: return "stuck";
  }
  return "?";
}

namespace {

void check_segments(std::vector<AnomalySegment> segs, std::size_t sensors, std::size_t length) {
  std::sort(segs.begin(), segs.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = segs[i];
    if (s.duration == 0) throw std::invalid_argument("anomaly segment with zero duration");
    if (s.start + s.duration > length) {
      throw std::invalid_argument("anomaly segment [" + std::to_string(s.start) + ", " +
                                  std::to_string(s.start + s.duration) + ") exceeds length " + std::to_string(length));
    }
    if (s.sensors.empty()) throw std::invalid_argument("anomaly segment names no sensors");
    for (auto n : s.sensors) {
      if (n >= sensors) throw std::invalid_argument("anomaly sensor index " + std::to_string(n) + " out of range");
    }
    if (i > 0 && segs[i - 1].start + segs[i - 1].duration > s.start) {
      throw std::invalid_argument("overlapping anomaly segments starting at " + std::to_string(segs[i - 1].start) +
                                  " and " + std::to_string(s.start));
    }
  }
}

}  // namespace

SynthResult synth_generate(const SynthConfig& cfg) {
  if (cfg.sensors == 0 || cfg.length == 0) throw std::invalid_argument("synth: sensors and length must be >= 1");
  check_segments(cfg.anomalies, cfg.sensors, cfg.length);
  const std::size_t n_clusters = cfg.clusters == 0 ? (cfg.sensors + 1) / 2 : std::min(cfg.clusters, cfg.sensors);
  const std::size_t total = 2 * cfg.length;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  struct Cluster {
    double period, phase;
    std::vector<double> latent;
  };
  std::vector<Cluster> clusters(n_clusters);
  constexpr double kAr = 0.995;
  const double innovation = std::sqrt(1.0 - kAr * kAr);
  for (auto& c : clusters) {
    c.period = 20.0 + 40.0 * unit(rng);
    c.phase = 2.0 * std::numbers::pi * unit(rng);
    c.latent.resize(total);
    double z = gauss(rng);
    for (std::size_t t = 0; t < total; ++t) {
      z = kAr * z + innovation * gauss(rng);
      c.latent[t] = z;
    }
  }

  SynthResult res;
  std::vector<double> series(cfg.sensors * total);
  for (std::size_t n = 0; n < cfg.sensors; ++n) {
    const std::size_t k = n % n_clusters;
    res.cluster_of.push_back(k);
    const double amp = 0.5 + 1.5 * unit(rng);
    const double offset = -1.0 + 2.0 * unit(rng);
    const auto& c = clusters[k];
    for (std::size_t t = 0; t < total; ++t) {
      const double wave = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / c.period + c.phase);
      series[n * total + t] = offset + amp * (wave + cfg.latent * c.latent[t] + cfg.noise * gauss(rng));
    }
  }

  auto split = [&](std::size_t from) {
    RawSeries s;
    for (std::size_t n = 0; n < cfg.sensors; ++n) s.sensor_names.push_back("s" + std::to_string(n));
    s.values.resize(cfg.sensors * cfg.length);
    for (std::size_t n = 0; n < cfg.sensors; ++n) {
      std::copy_n(series.begin() + static_cast<std::ptrdiff_t>(n * total + from), cfg.length,
                  s.values.begin() + static_cast<std::ptrdiff_t>(n * cfg.length));
    }
    for (std::size_t t = 0; t < cfg.length; ++t) s.timestamps.push_back(std::to_string(from + t));
    return s;
  };
  res.train = split(0);
  res.test = split(cfg.length);
  res.test.labels.assign(cfg.length, 0);

  std::vector<double> stddev(cfg.sensors);
  for (std::size_t n = 0; n < cfg.sensors; ++n) {
    double m = 0.0, v = 0.0;
    for (std::size_t t = 0; t < cfg.length; ++t) m += res.test.at(n, t);
    m /= static_cast<double>(cfg.length);
    for (std::size_t t = 0; t < cfg.length; ++t) v += (res.test.at(n, t) - m) * (res.test.at(n, t) - m);
    stddev[n] = std::sqrt(v / static_cast<double>(cfg.length));
  }

  for (const auto& seg : cfg.anomalies) {
    for (auto n : seg.sensors) {
      const double held = res.test.at(n, seg.start);
      for (std::size_t i = 0; i < seg.duration; ++i) {
        double& x = res.test.at(n, seg.start + i);
        switch (seg.type) {
          case AnomalyType::kSpike:
            x += seg.magnitude * stddev[n];
            break;
          case AnomalyType::kDrift:
            x += seg.magnitude * stddev[n] * static_cast<double>(i + 1) / static_cast<double>(seg.duration);
            break;
          case AnomalyType::kStuck:
            x = held;
            break;
        }
      }
    }
    for (std::size_t i = 0; i < seg.duration; ++i) res.test.labels[seg.start + i] = 1;
  }
  return res;
}

std::vector<AnomalySegment> place_anomalies(std::size_t count, AnomalyType type, std::size_t sensors,
                                            std::size_t length, std::size_t duration, double magnitude,
                                            std::size_t margin, std::uint64_t seed) {
  std::vector<AnomalySegment> out;
  if (count == 0) return out;
  if (margin >= length) throw std::invalid_argument("anomaly margin leaves no room in the series");
  const std::size_t slot = (length - margin) / count;
  if (slot < 2 * duration) {
    throw std::invalid_argument(std::to_string(count) + " anomalies of duration " + std::to_string(duration) +
                                " do not fit in length " + std::to_string(length));
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = 0; i < count; ++i) {
    AnomalySegment seg;
    seg.type = type;
    seg.duration = duration;
    seg.magnitude = magnitude;
    std::uniform_int_distribution<std::size_t> offset(0, slot - duration);
    seg.start = margin + i * slot + offset(rng);
    std::uniform_int_distribution<std::size_t> pick(0, sensors - 1);
    seg.sensors.push_back(pick(rng));
    if (sensors > 1 && std::uniform_int_distribution<int>(0, 1)(rng) == 1) {
      std::size_t other = pick(rng);
      while (other == seg.sensors[0]) other = pick(rng);
      seg.sensors.push_back(other);
      std::sort(seg.sensors.begin(), seg.sensors.end());
    }
    out.push_back(std::move(seg));
  }
  return out;
}

std::string truth_graph_json(const SynthResult& result) {
  std::size_t n_clusters = 0;
  for (auto k : result.cluster_of) n_clusters = std::max(n_clusters, k + 1);
  nlohmann::json j;
  auto clusters = nlohmann::json::array();
  for (std::size_t k = 0; k < n_clusters; ++k) {
    auto members = nlohmann::json::array();
    for (std::size_t n = 0; n < result.cluster_of.size(); ++n) {
      if (result.cluster_of[n] == k) members.push_back(n);
    }
    clusters.push_back(members);
  }
  auto edges = nlohmann::json::array();
  for (std::size_t a = 0; a < result.cluster_of.size(); ++a) {
    for (std::size_t b = a + 1; b < result.cluster_of.size(); ++b) {
      if (result.cluster_of[a] == result.cluster_of[b]) edges.push_back({a, b});
    }
  }
  j["sensors"] = result.train.sensor_names;
  j["clusters"] = clusters;
  j["sensor_cluster"] = result.cluster_of;
  j["edges"] = edges;
  return j.dump(2) + "\n";
}

}  // namespace can
