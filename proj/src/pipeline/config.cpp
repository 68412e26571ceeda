#include "can/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace can {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw UsageError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw UsageError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream is(v);
  std::string part;
  while (std::getline(is, part, ',')) out.push_back(to_size(key, trim(part)));
  if (out.empty()) throw UsageError("config key '" + key + "': empty list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CAN_SIZE_KEY(name, field)                                                                   \
  {                                                                                                 \
    name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_size(k, v); }, \
           [](const RunConfig& c) { return std::to_string(c.field); } }                             \
  }
#define CAN_DOUBLE_KEY(name, field)                                                                   \
  {                                                                                                   \
    name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
           [](const RunConfig& c) { return fmt(c.field); } }                                          \
  }
#define CAN_BOOL_KEY(name, field)                                                                   \
  {                                                                                                 \
    name, {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
           [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); } }             \
  }

const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = {
      CAN_SIZE_KEY("window", train.model.window),
      CAN_SIZE_KEY("layers", train.model.layers),
      CAN_SIZE_KEY("heads", train.model.heads),
      CAN_SIZE_KEY("d_model", train.model.d_model),
      CAN_SIZE_KEY("d_embed", train.model.d_embed),
      CAN_SIZE_KEY("d_local", train.model.d_local),
      CAN_SIZE_KEY("top_k", train.model.top_k),
      CAN_DOUBLE_KEY("beta", train.model.beta),
      CAN_BOOL_KEY("learned_positions", train.model.learned_positions),
      CAN_BOOL_KEY("local_graph", train.model.local_graph),
      CAN_BOOL_KEY("graph_conv", train.model.graph_conv),
      CAN_BOOL_KEY("autoencoder", train.model.autoencoder),
      CAN_BOOL_KEY("rec_decoder", train.model.rec_decoder),
      CAN_SIZE_KEY("batch_size", train.batch_size),
      CAN_DOUBLE_KEY("lr", train.learning_rate),
      CAN_DOUBLE_KEY("lr_decay", train.lr_decay),
      CAN_DOUBLE_KEY("phi_start", train.schedule.phi_start),
      CAN_DOUBLE_KEY("phi_final", train.schedule.phi_final),
      CAN_SIZE_KEY("phi_switch_epoch", train.schedule.switch_after),
      CAN_SIZE_KEY("patience", train.patience),
      CAN_SIZE_KEY("max_epochs", train.max_epochs),
      CAN_DOUBLE_KEY("val_fraction", train.val_fraction),
      CAN_SIZE_KEY("downsample", downsample),
      CAN_SIZE_KEY("k_s", detect.k_s),
      CAN_BOOL_KEY("can_plus", detect.can_plus),
      CAN_DOUBLE_KEY("rec_weight", detect.rec_weight),
      {"seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.train.seed = to_size(k, v);
          c.seed_set = true;
        },
        [](const RunConfig& c) { return std::to_string(c.train.seed); }}},
      {"ae_hidden",
       {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.model.ae_hidden = to_sizes(k, v); },
        [](const RunConfig& c) { return join(c.train.model.ae_hidden); }}},
      {"graph_norm",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          try {
            c.train.model.graph_norm = parse_graph_norm(v);
          } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.train.model.graph_norm); }}},
      {"calibration",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          try {
            c.detect.calibration = parse_calibration(v);
          } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.detect.calibration); }}},
      {"ablation",
       {[](RunConfig& c, const std::string&, const std::string& v) {
          std::istringstream is(v);
          std::string part;
          while (std::getline(is, part, ',')) apply_ablation(c.train.model, trim(part));
        },
        [](const RunConfig&) { return std::string("none"); }}},
  };
  return table;
}

#undef CAN_SIZE_KEY
#undef CAN_DOUBLE_KEY
#undef CAN_BOOL_KEY

}  // namespace

Settings parse_settings(const std::string& text, const std::string& source) {
  Settings out;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw UsageError(source + ":" + std::to_string(line_no) + ": expected key = value, got '" + t + "'");
    }
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

Settings load_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_settings(ss.str(), path.string());
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : key_table()) keys.push_back(k);
  return keys;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = key_table();
  const auto it = table.find(key);
  if (it == table.end()) {
    std::string valid;
    for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw UsageError("unknown config key '" + key + "'; valid keys: " + valid);
  }
  it->second.set(config, key, value);
}

void apply_settings(RunConfig& config, const Settings& settings) {
  for (const auto& [k, v] : settings) apply_setting(config, k, v);
}

void apply_ablation(ModelConfig& config, const std::string& name) {
  if (name == "none" || name.empty()) return;
  if (name == "no-local-graph") {
    config.local_graph = false;
  } else if (name == "no-graph-conv") {
    config.graph_conv = false;
  } else if (name == "no-ae") {
    config.autoencoder = false;
  } else if (name == "no-rec-decoder") {
    config.rec_decoder = false;
  } else {
    throw UsageError("unknown ablation '" + name + "' (expected no-local-graph, no-graph-conv, no-ae, no-rec-decoder)");
  }
}

std::string describe(const RunConfig& config) {
  std::string out;
  for (const auto& [k, key] : key_table()) {
    if (k == "ablation") continue;
    out += k + " = " + key.get(config) + "\n";
  }
  return out;
}

}  // namespace can
