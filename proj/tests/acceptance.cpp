// One PASS/FAIL line per acceptance criterion plus a tally. The exit status
// reports whether every criterion ran to a verdict; the lines carry the result.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "can/attention.hpp"
#include "can/cli.hpp"
#include "can/detection.hpp"
#include "can/graph.hpp"
#include "can/model.hpp"
#include "can/ops.hpp"

using namespace can;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor64 random64(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor64(std::move(shape), std::move(v));
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// 1. Gradient suite, run as its own test binary.
Outcome gradients() {
  const auto start = Clock::now();
  const std::string cmd = std::string(CAN_GRADIENT_SUITE) + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  const double secs = seconds_since(start);
  const bool ok = status != -1 && WIFEXITED(status) && WEXITSTATUS(status) == 0;
  return {ok && secs < 60.0, std::string(ok ? "suite passed" : "suite failed") + " in " + fmt(secs) + " s"};
}

// 2. Global symmetry and sign, top-k against a sort oracle, local rows.
Outcome graph_properties() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> n_dist(1, 12), d_dist(1, 8), k_dist(1, 14);
  std::size_t violations = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = n_dist(rng), d = d_dist(rng), k = k_dist(rng);
    const auto a = global_adjacency(random64({n, d}, rng));
    const auto mask = topk_mask(a, k);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return a.at({i, x}) > a.at({i, y}); });
      double ones = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (a.at({i, j}) < 0.0 || std::abs(a.at({i, j}) - a.at({j, i})) > 1e-6) ++violations;
        ones += mask.at({i, j});
      }
      if (ones != static_cast<double>(std::min(k, n))) ++violations;
      for (std::size_t r = 0; r < std::min(k, n); ++r) {
        if (mask.at({i, order[r]}) != 1.0) ++violations;
      }
    }
    const std::size_t len = 1 + static_cast<std::size_t>(trial % 4);
    const auto p = init_graph_conv<double>(d, 1 + trial % 3, len, 0.8, rng);
    const auto local = local_adjacency(random64({n, len, d}, rng), p);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += local.at({i, j});
      if (std::abs(s - 1.0) > 1e-6) ++violations;
    }
  }
  const double secs = seconds_since(start);
  return {violations == 0 && secs < 10.0, std::to_string(violations) + " violations in " + fmt(secs) + " s"};
}

// 3. Retention identities of the graph convolution.
Outcome conv_identities() {
  std::mt19937_64 rng(3);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 8), d = 1 + static_cast<std::size_t>(trial % 5);
    const auto h = random64({2, n, 4, d}, rng, 3.0);
    const auto a = random64({2, n, n}, rng);
    mismatches += propagate(h, a, Tensor64::identity(d), 1.0).to_vector() != h.to_vector();
    mismatches += propagate(h, Tensor64::identity(n), Tensor64::identity(d), 0.0).to_vector() != h.to_vector();
    const auto hf = h.cast<float>();
    mismatches += propagate(hf, a.cast<float>(), Tensor::identity(d), 1.0).to_vector() != hf.to_vector();
    mismatches += propagate(hf, Tensor::identity(n), Tensor::identity(d), 0.0).to_vector() != hf.to_vector();
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 400 identity checks differ"};
}

// 4. Decoder prefixes ignore later positions; the encoder placeholder sees
// every timestamp.
Outcome causality() {
  ModelConfig c;
  c.sensors = 3;
  c.window = 5;
  c.layers = 2;
  c.heads = 2;
  c.d_model = 8;
  c.d_embed = 4;
  c.top_k = 2;
  const auto model = init_model<double>(c, 4);
  std::mt19937_64 rng(4);
  std::size_t failures = 0;

  const std::size_t full = c.window + c.layers;
  for (int trial = 0; trial < 10; ++trial) {
    const auto seed = random64({2, c.window, c.d_model}, rng);
    std::vector<Tensor64> xe;
    for (std::size_t i = 0; i < c.layers; ++i) xe.push_back(random64({2, 1, c.d_model}, rng));
    const auto base = decoder_forward(seed, xe, model.rec_decoder, full);
    for (std::size_t s = 0; s < c.window; ++s) {
      auto changed = seed.to_vector();
      for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t ch = 0; ch < c.d_model; ++ch) changed[(n * c.window + s) * c.d_model + ch] += 1.0;
      }
      const auto out = decoder_forward(Tensor64(seed.shape(), changed), xe, model.rec_decoder, full);
      const std::size_t p = c.layers + s;
      if (slice(out, -2, 0, p).to_vector() != slice(base, -2, 0, p).to_vector()) ++failures;
    }
  }

  const auto graph = build_graph(model);
  const auto x = random64({1, c.sensors, c.window}, rng, 0.3);
  const auto base = encoder_forward(x, model, graph);
  for (std::size_t n = 0; n < c.sensors; ++n) {
    for (std::size_t t = 0; t < c.window; ++t) {
      auto changed = x.to_vector();
      changed[n * c.window + t] += 0.25;
      const auto out = encoder_forward(Tensor64(x.shape(), changed), model, graph);
      if (slice(out.xe_layers.back(), 1, n, 1).to_vector() == slice(base.xe_layers.back(), 1, n, 1).to_vector()) {
        ++failures;
      }
    }
  }
  return {failures == 0, std::to_string(failures) + " causality or sensitivity failures"};
}

std::vector<int> brute_point_adjust(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::vector<int> out = pred;
  for (std::size_t t = 0; t < truth.size();) {
    if (!truth[t]) {
      ++t;
      continue;
    }
    std::size_t end = t;
    bool hit = false;
    for (; end < truth.size() && truth[end]; ++end) hit = hit || pred[end] == 1;
    if (hit) std::fill(out.begin() + static_cast<std::ptrdiff_t>(t), out.begin() + static_cast<std::ptrdiff_t>(end), 1);
    t = end;
  }
  return out;
}

std::vector<int> random_labels(std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution start(0.05), stay(0.8);
  std::vector<int> v(n, 0);
  int on = 0;
  for (auto& x : v) {
    on = on ? stay(rng) : start(rng);
    x = on;
  }
  return v;
}

// 5. Point-adjust, confusion counts and threshold search against oracles.
Outcome detection_oracles() {
  std::mt19937_64 rng(5);
  std::size_t failures = 0;
  std::uniform_int_distribution<std::size_t> len(1, 200);
  std::uniform_real_distribution<double> density(0.0, 0.3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    const auto truth = random_labels(n, rng);
    std::bernoulli_distribution flag(density(rng));
    std::vector<int> pred(n);
    for (auto& p : pred) p = flag(rng);
    failures += point_adjust(pred, truth) != brute_point_adjust(pred, truth);
  }

  const auto c = confusion_metrics({1, 0, 1, 0, 1}, {1, 0, 0, 0, 1});
  failures += !(c.tp == 2 && c.fp == 1 && c.fn == 0 && c.tn == 2);
  failures += std::abs(c.f1 - 0.8) > 1e-15;

  std::normal_distribution<double> noise;
  std::uniform_int_distribution<std::size_t> short_len(2, 120);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = short_len(rng);
    auto truth = random_labels(n, rng);
    truth[n / 2] = 1;
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = noise(rng) + (truth[i] ? 1.0 : 0.0);
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    double best = 0.0;
    for (std::size_t a = 0; a <= n; ++a) {
      // Every cut: flag the scores strictly above the a-th smallest value.
      const double theta = a == 0 ? sorted.front() - 1.0 : sorted[a - 1];
      std::vector<int> raw(n);
      for (std::size_t i = 0; i < n; ++i) raw[i] = scores[i] > theta;
      best = std::max(best, confusion_metrics(brute_point_adjust(raw, truth), truth).f1);
    }
    failures += threshold_grid_search(scores, truth).counts.f1 != best;
  }
  return {failures == 0, std::to_string(failures) + " oracle mismatches"};
}

// 6. Mean and interquartile range on [1..5]; constant rows stay finite.
Outcome iqr_normalization() {
  const auto cal = calibrate_errors(Tensor64({1, 5}, {1, 2, 3, 4, 5}));
  const auto s = normalize_errors(Tensor64({1, 3}, {2, 2.5, 7}), Tensor64({1, 4}, {2, 2, 2, 2}));
  bool finite = true;
  for (double v : s.to_vector()) finite = finite && std::isfinite(v);
  return {cal.mu[0] == 3.0 && cal.iqr[0] == 2.0 && finite,
          "mu=" + fmt(cal.mu[0]) + " iqr=" + fmt(cal.iqr[0]) + (finite ? " finite guard" : " non-finite guard")};
}

struct DeskRun {
  int code = -1;
  double seconds = 0.0;
  double rmse = 0.0;
  double f1 = 0.0;
  std::string error;
};

std::vector<std::string> desk_train_args(const fs::path& data, const fs::path& out) {
  return {"train",    "--data", (data / "train.csv").string(), "--out", out.string(), "--seed", "7", "--window", "5",
          "--layers", "1",      "--d-model", "16", "--heads", "8", "--epochs", "200"};
}

DeskRun desk_run(const fs::path& data, const fs::path& out) {
  DeskRun r;
  const auto start = Clock::now();
  r.code = cli(desk_train_args(data, out), &r.error);
  r.seconds = seconds_since(start);
  if (r.code != 0) return r;
  r.rmse = nlohmann::json::parse(read_bytes(out / "summary.json"))["train_prediction_rmse"];
  r.code = cli({"evaluate", "--checkpoint", (out / "model.ckpt").string(), "--data", (data / "test.csv").string(),
                "--out", out.string()},
               &r.error);
  if (r.code == 0) r.f1 = nlohmann::json::parse(read_bytes(out / "report.json"))["f1"];
  return r;
}

// 7. End-to-end gate on five injected spikes.
Outcome end_to_end(const fs::path& root, DeskRun& run) {
  const auto data = root / "desk";
  if (cli({"synth", "--sensors", "5", "--length", "2000", "--seed", "7", "--spikes", "5", "--out", data.string()}) != 0) {
    return {false, "synth failed"};
  }
  run = desk_run(data, root / "desk_run1");
  if (run.code != 0) return {false, "exit " + std::to_string(run.code) + ": " + run.error};
  return {run.rmse < 0.05 && run.f1 >= 0.8 && run.seconds < 300.0,
          "train rmse=" + fmt(run.rmse) + " f1=" + fmt(run.f1) + " train+eval " + fmt(run.seconds) + " s"};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// 8. Full model against the variant without graph convolution, five seeds.
Outcome ablation_direction(const fs::path& root) {
  std::vector<double> full, ablated;
  for (int seed = 1; seed <= 5; ++seed) {
    const auto s = std::to_string(seed);
    const auto data = root / ("ablation_data" + s);
    if (cli({"synth", "--sensors", "6", "--length", "1000", "--clusters", "2", "--spikes", "3", "--drifts", "2",
             "--stucks", "2", "--magnitude", "2", "--seed", s, "--out", data.string()}) != 0) {
      return {false, "synth failed"};
    }
    for (const bool ablate : {false, true}) {
      const auto out = root / ((ablate ? "ablated" : "full") + s);
      std::vector<std::string> args = {"train",  "--data",    (data / "train.csv").string(), "--out", out.string(),
                                       "--seed", s,           "--window", "5", "--layers", "1",
                                       "--d-model", "8", "--heads", "2", "--epochs", "40"};
      if (ablate) args.insert(args.end(), {"--ablation", "no-graph-conv"});
      std::string err;
      if (cli(args, &err) != 0 || cli({"evaluate", "--checkpoint", (out / "model.ckpt").string(), "--data",
                                       (data / "test.csv").string(), "--out", out.string()},
                                      &err) != 0) {
        return {false, err};
      }
      const double f1 = nlohmann::json::parse(read_bytes(out / "report.json"))["f1"];
      (ablate ? ablated : full).push_back(f1);
    }
  }
  const double a = median(full), b = median(ablated);
  return {a >= b, "median f1 full=" + fmt(a) + " no-graph-conv=" + fmt(b)};
}

double best_time(const std::function<void()>& fn, int repeats) {
  double best = 1e30;
  for (int r = 0; r < repeats; ++r) {
    const auto start = Clock::now();
    fn();
    best = std::min(best, seconds_since(start));
  }
  return best;
}

// 9. Attention time against window length, graph time against sensor count.
Outcome complexity() {
  NoGradGuard no_grad;
  std::mt19937_64 rng(9);
  const auto params = init_attention<float>(16, 2, rng);
  const auto attention_time = [&](std::size_t k) {
    const auto h = random64({4, k, 16}, rng).cast<float>();
    return best_time([&] { (void)multi_head_attention(h, params, false); }, 5);
  };
  const double attn_ratio = attention_time(512) / attention_time(256);

  const auto graph_time = [&](std::size_t n) {
    const auto gp = init_graph_conv<float>(16, 16, 6, 0.8, rng);
    const auto graph = build_sensor_graph(init_embedding<float>(n, 10, rng), 10);
    const auto h = random64({n, 6, 16}, rng).cast<float>();
    return best_time(
        [&] {
          const auto local = local_adjacency(h, gp);
          (void)global_local_conv(h, graph, local, gp);
        },
        5);
  };
  const double graph_ratio = graph_time(256) / graph_time(128);
  return {attn_ratio >= 2.0 && attn_ratio <= 6.0 && graph_ratio <= 6.0,
          "attention x" + fmt(attn_ratio) + " for 2K, graph x" + fmt(graph_ratio) + " for 2N"};
}

// 10. A second seeded run of the gate reproduces every byte.
Outcome reproducibility(const fs::path& root, const DeskRun& first) {
  if (first.code != 0) return {false, "first run failed"};
  const auto second = desk_run(root / "desk", root / "desk_run2");
  if (second.code != 0) return {false, "second run exit " + std::to_string(second.code)};
  const auto a = root / "desk_run1", b = root / "desk_run2";
  const bool ckpt = read_bytes(a / "model.ckpt") == read_bytes(b / "model.ckpt");
  const bool report = read_bytes(a / "report.json") == read_bytes(b / "report.json");
  return {ckpt && report, std::string("checkpoint ") + (ckpt ? "identical" : "differs") + ", report " +
                              (report ? "identical" : "differs")};
}

}  // namespace

int main() {
  const auto root = fs::temp_directory_path() / "can_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  int passed = 0;
  bool crashed = false;
  const auto report = [&](int id, const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << std::endl;
    passed += o.pass;
  };
  const auto guarded = [&](const std::function<Outcome()>& fn) -> Outcome {
    try {
      return fn();
    } catch (const std::exception& e) {
      crashed = true;
      return {false, std::string("exception: ") + e.what()};
    }
  };

  DeskRun desk;
  report(1, "gradient suite", guarded(gradients));
  report(2, "graph properties", guarded(graph_properties));
  report(3, "convolution identities", guarded(conv_identities));
  report(4, "causality and bidirectionality", guarded(causality));
  report(5, "detection oracles", guarded(detection_oracles));
  report(6, "iqr normalization", guarded(iqr_normalization));
  report(7, "end-to-end gate", guarded([&] { return end_to_end(root, desk); }));
  report(8, "ablation direction", guarded([&] { return ablation_direction(root); }));
  report(9, "complexity scaling", guarded(complexity));
  report(10, "reproducibility", guarded([&] { return reproducibility(root, desk); }));
  std::cout << "acceptance: " << passed << "/10 criteria passed" << std::endl;
  return crashed ? 1 : 0;
}
