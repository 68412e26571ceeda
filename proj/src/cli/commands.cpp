#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "can/checkpoint.hpp"
#include "can/cli.hpp"
#include "can/config.hpp"
#include "can/data.hpp"
#include "can/detection.hpp"
#include "can/synth.hpp"
#include "can/train.hpp"

namespace can {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Override {
  const char* flag;
  const char* key;
  const char* help;
  std::string value;
};

void add_overrides(CLI::App* cmd, std::vector<Override>& overrides) {
  for (auto& o : overrides) cmd->add_option(o.flag, o.value, o.help);
}

void apply_overrides(CLI::App* cmd, const std::vector<Override>& overrides, RunConfig& config) {
  for (const auto& o : overrides) {
    if (cmd->count(std::string(o.flag).substr(0, std::string(o.flag).find(','))) > 0) apply_setting(config, o.key, o.value);
  }
}

void apply_sets(const std::vector<std::string>& sets, RunConfig& config) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
  }
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::size_t sensors = 5, length = 2000, clusters = 0;
  std::uint64_t seed = 0;
  std::size_t spikes = 0, drifts = 0, stucks = 0, duration = 10, margin = 50;
  double magnitude = 5.0, noise = 0.05, latent = 0.3;
  std::string out = ".";
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg;
  cfg.sensors = a.sensors;
  cfg.length = a.length;
  cfg.seed = a.seed;
  cfg.clusters = a.clusters;
  cfg.noise = a.noise;
  cfg.latent = a.latent;
  const std::size_t total = a.spikes + a.drifts + a.stucks;
  try {
    auto placed = place_anomalies(total, AnomalyType::kSpike, a.sensors, a.length, a.duration, a.magnitude, a.margin, a.seed);
    // Round-robin over the requested kinds so each spreads over the split.
    std::size_t left[3] = {a.spikes, a.drifts, a.stucks};
    std::size_t i = 0;
    while (i < placed.size()) {
      for (int kind = 0; kind < 3 && i < placed.size(); ++kind) {
        if (left[kind] == 0) continue;
        --left[kind];
        placed[i++].type = static_cast<AnomalyType>(kind);
      }
    }
    cfg.anomalies = std::move(placed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto res = synth_generate(cfg);
  const fs::path dir(a.out);
  ensure_dir(dir);
  write_csv(dir / "train.csv", res.train);
  write_csv(dir / "test.csv", res.test);
  write_text(dir / "truth-graph.json", truth_graph_json(res));
  std::size_t labelled = 0;
  for (int v : res.test.labels) labelled += static_cast<std::size_t>(v);
  out << "wrote " << (dir / "train.csv").string() << ", " << (dir / "test.csv").string() << ", "
      << (dir / "truth-graph.json").string() << " (" << cfg.anomalies.size() << " anomalies, " << labelled
      << " labelled points)\n";
  return kExitOk;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data, config, out;
  std::vector<std::string> ablations, sets;
};

int cmd_train(CLI::App* cmd, const TrainArgs& a, const std::vector<Override>& overrides, std::ostream& out) {
  RunConfig rc;
  if (!a.config.empty()) apply_settings(rc, load_settings(a.config));
  apply_overrides(cmd, overrides, rc);
  apply_sets(a.sets, rc);
  for (const auto& ab : a.ablations) apply_ablation(rc.train.model, ab);
  if (!rc.seed_set) throw UsageError("train requires a seed (--seed or 'seed' in the config file)");
  require_file(a.data, "training data");
  const fs::path dir(a.out);
  ensure_dir(dir);

  auto raw = downsample_median(load_csv(a.data), rc.downsample == 0 ? 1 : rc.downsample);
  rc.train.model.sensors = raw.sensors();
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto stats = minmax_fit(raw);
  const auto windows = make_windows(minmax_apply(raw, stats), rc.train.model.window);

  out << "resolved configuration:\n" << describe(rc);
  std::ofstream log(dir / "train.log", std::ios::binary);
  if (!log) throw DataError("cannot write " + (dir / "train.log").string());
  auto result = train(windows, rc.train, [&](const EpochLog& e) {
    json j{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"phi", e.phi}, {"lr", e.lr}};
    log << j.dump() << '\n' << std::flush;
  });

  CheckpointMeta meta;
  meta.sensor_names = raw.sensor_names;
  meta.norm = stats;
  meta.downsample = rc.downsample == 0 ? 1 : rc.downsample;
  save_checkpoint(result.model, meta, dir / "model.ckpt");
  const double rmse = prediction_rmse(result.model, windows);
  json summary{{"epochs_run", result.log.size()},
               {"best_epoch", result.best_epoch},
               {"best_val_loss", result.log.empty() ? 0.0 : result.log[result.best_epoch - 1].val_loss},
               {"train_prediction_rmse", rmse},
               {"parameter_count", result.model.parameter_count()}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << "trained " << result.log.size() << " epochs, best epoch " << result.best_epoch
      << ", train prediction RMSE " << fmt(rmse) << ", " << result.model.parameter_count() << " parameters\n"
      << "wrote " << (dir / "model.ckpt").string() << ", " << (dir / "train.log").string() << "\n";
  return kExitOk;
}

// --- evaluate --------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, out, config, train_data;
  bool can_plus = false;
  std::vector<std::string> sets;
};

RawSeries prepare(const fs::path& path, const Checkpoint& ck) {
  auto raw = load_csv(path);
  if (raw.sensors() != ck.model.config.sensors) {
    throw DataError(path.string() + " has " + std::to_string(raw.sensors()) + " sensors, checkpoint expects " +
                    std::to_string(ck.model.config.sensors));
  }
  return minmax_apply(downsample_median(raw, ck.meta.downsample), ck.meta.norm);
}

int cmd_evaluate(CLI::App* cmd, const EvalArgs& a, const std::vector<Override>& overrides, std::ostream& out) {
  RunConfig rc;
  if (!a.config.empty()) apply_settings(rc, load_settings(a.config));
  apply_overrides(cmd, overrides, rc);
  apply_sets(a.sets, rc);
  if (a.can_plus) rc.detect.can_plus = true;
  require_file(a.checkpoint, "checkpoint");
  require_file(a.data, "test data");
  if (rc.detect.calibration == Calibration::kTrain) {
    if (a.train_data.empty()) throw UsageError("calibration = train needs --train-data");
    require_file(a.train_data, "training data");
  }
  if (rc.detect.k_s == 0) throw UsageError("k_s must be >= 1");
  const fs::path dir(a.out);
  ensure_dir(dir);

  const auto ck = load_checkpoint(a.checkpoint);
  const auto test = prepare(a.data, ck);
  RawSeries cal;
  if (rc.detect.calibration == Calibration::kTrain) cal = prepare(a.train_data, ck);
  Evaluation ev;
  try {
    ev = evaluate(ck.model, test, rc.detect, rc.detect.calibration == Calibration::kTrain ? &cal : nullptr);
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  const auto& r = ev.report;

  json per = json::array();
  for (std::size_t i = 0; i < r.scores.size(); ++i) per.push_back({r.scores[i], r.raw[i], r.adjusted[i]});
  json report{{"threshold", r.threshold},
              {"precision", r.counts.precision},
              {"recall", r.counts.recall},
              {"f1", r.counts.f1},
              {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}},
              {"k_s", rc.detect.k_s},
              {"calibration", to_string(rc.detect.calibration)},
              {"can_plus", rc.detect.can_plus},
              {"first_timestamp", ev.first_timestamp},
              {"per_timestamp", per}};
  write_text(dir / "report.json", report.dump(2) + "\n");
  std::string csv = "t,score,label\n";
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    csv += std::to_string(ev.first_timestamp + i) + "," + fmt(r.scores[i]) + "," + std::to_string(r.truth[i]) + "\n";
  }
  write_text(dir / "scores.csv", csv);
  out << "precision=" << fmt(r.counts.precision) << " recall=" << fmt(r.counts.recall) << " f1=" << fmt(r.counts.f1)
      << " threshold=" << fmt(r.threshold) << "\n";
  return kExitOk;
}

// --- export-embeddings -----------------------------------------------------

int cmd_export(const std::string& checkpoint, const std::string& path, std::ostream& out) {
  require_file(checkpoint, "checkpoint");
  const auto ck = load_checkpoint(checkpoint);
  const auto& e = ck.model.embedding;
  const std::size_t n = e.dim(0), d = e.dim(1);
  std::string csv = "sensor_id";
  for (std::size_t j = 0; j < d; ++j) csv += ",e_" + std::to_string(j);
  csv += "\n";
  const auto v = e.data();
  for (std::size_t i = 0; i < n; ++i) {
    csv += i < ck.meta.sensor_names.size() ? ck.meta.sensor_names[i] : std::to_string(i);
    for (std::size_t j = 0; j < d; ++j) csv += "," + fmt(static_cast<double>(v[i * d + j]));
    csv += "\n";
  }
  if (path.empty() || path == "-") {
    out << csv;
  } else {
    const fs::path p(path);
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    write_text(p, csv);
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graph-attention anomaly detection for multivariate sensor series", "can"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate correlated synthetic sensor data with injected anomalies");
  synth->add_option("--sensors", sa.sensors, "Number of sensors")->capture_default_str();
  synth->add_option("--length", sa.length, "Timestamps per split")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Random seed")->required();
  synth->add_option("--clusters", sa.clusters, "Sensor clusters (0 = ceil(sensors / 2))")->capture_default_str();
  synth->add_option("--spikes", sa.spikes, "Spike segments in the test split")->capture_default_str();
  synth->add_option("--drifts", sa.drifts, "Drift segments in the test split")->capture_default_str();
  synth->add_option("--stucks", sa.stucks, "Stuck-value segments in the test split")->capture_default_str();
  synth->add_option("--magnitude", sa.magnitude, "Anomaly size in sensor standard deviations")->capture_default_str();
  synth->add_option("--duration", sa.duration, "Timestamps per anomaly segment")->capture_default_str();
  synth->add_option("--margin", sa.margin, "Anomaly-free prefix of the test split")->capture_default_str();
  synth->add_option("--noise", sa.noise, "Noise level relative to amplitude")->capture_default_str();
  synth->add_option("--latent", sa.latent, "Weight of the shared slow cluster component")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->capture_default_str();

  TrainArgs ta;
  std::vector<Override> train_overrides = {
      {"--seed", "seed", "Random seed (required here or in the config)", {}},
      {"--window", "window", "History length K", {}},
      {"--layers", "layers", "Coupled layers M", {}},
      {"--heads", "heads", "Attention heads", {}},
      {"--d-model", "d_model", "Model width", {}},
      {"--d-embed", "d_embed", "Sensor embedding width", {}},
      {"--top-k", "top_k", "Neighbour candidates per sensor", {}},
      {"--beta", "beta", "Self-retention ratio of the graph convolution", {}},
      {"--epochs", "max_epochs", "Maximum epochs", {}},
      {"--lr", "lr", "Initial learning rate", {}},
      {"--lr-decay", "lr_decay", "Per-epoch learning-rate factor", {}},
      {"--batch-size", "batch_size", "Windows per step", {}},
      {"--patience", "patience", "Early-stopping patience", {}},
      {"--downsample", "downsample", "Median downsampling factor", {}},
  };
  auto* trn = app.add_subcommand("train", "Train a model on a CSV series");
  trn->add_option("--data", ta.data, "Training CSV")->required();
  trn->add_option("--config", ta.config, "key = value configuration file");
  trn->add_option("--out", ta.out, "Output directory for model.ckpt and train.log")->required();
  trn->add_option("--ablation", ta.ablations, "no-local-graph | no-graph-conv | no-ae | no-rec-decoder");
  trn->add_option("--set", ta.sets, "Extra configuration as key=value");
  add_overrides(trn, train_overrides);

  EvalArgs ea;
  std::vector<Override> eval_overrides = {
      {"--k-s", "k_s", "Sensors summed per anomaly score", {}},
      {"--calibration", "calibration", "Error statistics source: stream | train", {}},
      {"--rec-weight", "rec_weight", "Reconstruction weight of the fused score", {}},
  };
  auto* evl = app.add_subcommand("evaluate", "Score a labelled CSV and search the decision threshold");
  evl->add_option("--checkpoint", ea.checkpoint, "Trained model")->required();
  evl->add_option("--data", ea.data, "Labelled test CSV")->required();
  evl->add_option("--out", ea.out, "Output directory for report.json and scores.csv")->required();
  evl->add_option("--config", ea.config, "key = value configuration file");
  evl->add_option("--train-data", ea.train_data, "Training CSV for train calibration");
  evl->add_flag("--can-plus", ea.can_plus, "Fuse the reconstruction error into the score");
  evl->add_option("--set", ea.sets, "Extra configuration as key=value");
  add_overrides(evl, eval_overrides);

  std::string ex_ckpt, ex_out;
  auto* exp = app.add_subcommand("export-embeddings", "Write the learned sensor embeddings as CSV");
  exp->add_option("--checkpoint", ex_ckpt, "Trained model")->required();
  exp->add_option("--out", ex_out, "Output CSV (stdout when omitted)");

  std::vector<std::string> argv_store{"can"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa, out);
    if (*trn) return cmd_train(trn, ta, train_overrides, out);
    if (*evl) return cmd_evaluate(evl, ea, eval_overrides, out);
    if (*exp) return cmd_export(ex_ckpt, ex_out, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric divergence: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}

}  // namespace can
