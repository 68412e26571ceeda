#include "can/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace can {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "can-checkpoint";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

json config_to_json(const ModelConfig& c) {
  return json{{"sensors", c.sensors},
              {"window", c.window},
              {"layers", c.layers},
              {"heads", c.heads},
              {"d_model", c.d_model},
              {"d_embed", c.d_embed},
              {"d_local", c.d_local},
              {"top_k", c.top_k},
              {"beta", c.beta},
              {"ae_hidden", c.ae_hidden},
              {"graph_norm", to_string(c.graph_norm)},
              {"learned_positions", c.learned_positions},
              {"local_graph", c.local_graph},
              {"graph_conv", c.graph_conv},
              {"autoencoder", c.autoencoder},
              {"rec_decoder", c.rec_decoder}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.sensors = j.at("sensors").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_embed = j.at("d_embed").get<std::size_t>();
  c.d_local = j.at("d_local").get<std::size_t>();
  c.top_k = j.at("top_k").get<std::size_t>();
  c.beta = j.at("beta").get<double>();
  c.ae_hidden = j.at("ae_hidden").get<std::vector<std::size_t>>();
  c.graph_norm = parse_graph_norm(j.at("graph_norm").get<std::string>());
  c.learned_positions = j.at("learned_positions").get<bool>();
  c.local_graph = j.at("local_graph").get<bool>();
  c.graph_conv = j.at("graph_conv").get<bool>();
  c.autoencoder = j.at("autoencoder").get<bool>();
  c.rec_decoder = j.at("rec_decoder").get<bool>();
  return c;
}

}  // namespace

std::string model_config_json(const ModelConfig& config) { return config_to_json(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) { return config_from_json(json::parse(text)); }

void save_checkpoint(const CanModel<float>& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  json header;
  header["format"] = kFormat;
  header["version"] = kCheckpointVersion;
  header["config"] = config_to_json(model.config);
  header["meta"] = {{"sensor_names", meta.sensor_names},
                    {"norm_min", meta.norm.min},
                    {"norm_max", meta.norm.max},
                    {"downsample", meta.downsample}};
  auto params = json::array();
  std::string data;
  for (const auto& [name, t] : model.named_parameters()) {
    params.push_back({{"name", name}, {"shape", t.shape()}, {"offset", data.size()}});
    for (float v : t.data()) put_u32(data, std::bit_cast<std::uint32_t>(v));
  }
  header["params"] = params;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  std::string prefix;
  const std::uint64_t len = text.size();
  for (int i = 0; i < 8; ++i) prefix.push_back(static_cast<char>((len >> (8 * i)) & 0xffu));
  out << prefix << text << data;
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto corrupt = [&](const std::string& why) { return CheckpointError(path.string() + ": corrupt checkpoint, " + why); };
  if (bytes.size() < 8) throw corrupt("missing header length");
  const std::uint64_t hlen = get_u64(raw);
  if (hlen > bytes.size() - 8) throw corrupt("header truncated");

  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const json::exception& e) {
    throw corrupt(std::string("unreadable header: ") + e.what());
  }
  if (header.value("format", "") != kFormat) throw corrupt("unknown format");
  const int version = header.value("version", -1);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ck;
  try {
    ck.model = init_model<float>(config_from_json(header.at("config")), 0);
    const auto& m = header.at("meta");
    ck.meta.sensor_names = m.at("sensor_names").get<std::vector<std::string>>();
    ck.meta.norm.min = m.at("norm_min").get<std::vector<double>>();
    ck.meta.norm.max = m.at("norm_max").get<std::vector<double>>();
    ck.meta.downsample = m.at("downsample").get<std::size_t>();
  } catch (const json::exception& e) {
    throw corrupt(std::string("bad header field: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw corrupt(e.what());
  }

  const std::size_t data_start = 8 + hlen;
  const std::size_t data_len = bytes.size() - data_start;
  auto params = ck.model.named_parameters();
  const auto& listed = header.at("params");
  if (listed.size() != params.size()) {
    throw corrupt("lists " + std::to_string(listed.size()) + " parameters, configuration needs " +
                  std::to_string(params.size()));
  }
  std::size_t expected_end = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& entry = listed[i];
    if (entry.at("name").get<std::string>() != name || entry.at("shape").get<Shape>() != t.shape()) {
      throw corrupt("parameter " + std::to_string(i) + " does not match " + name + " " + to_string(t.shape()));
    }
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    if (offset + 4 * t.size() > data_len) throw corrupt("data truncated at " + name);
    auto dst = t.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] = std::bit_cast<float>(get_u32(raw + data_start + offset + 4 * k));
    }
    expected_end = std::max(expected_end, offset + 4 * t.size());
  }
  if (expected_end != data_len) throw corrupt("trailing bytes after parameter data");
  return ck;
}

}  // namespace can
