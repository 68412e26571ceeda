#include "can/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace can {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double median(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

RawSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_row(line).empty() || line.find_first_not_of(" \t\r") == std::string::npos) {
    throw DataError(path.string() + ": empty file");
  }
  const auto header = split_row(line);
  int ts_col = -1, label_col = -1;
  std::vector<std::size_t> sensor_cols;
  RawSeries s;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "timestamp") {
      ts_col = static_cast<int>(c);
    } else if (header[c] == "label") {
      label_col = static_cast<int>(c);
    } else {
      sensor_cols.push_back(c);
      s.sensor_names.push_back(header[c]);
    }
  }
  if (sensor_cols.empty()) throw DataError(path.string() + ": no sensor columns in header");

  std::vector<std::vector<double>> columns(sensor_cols.size());
  std::size_t line_no = 1, row = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const auto cells = split_row(line);
    const auto where = path.string() + ": row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")";
    if (cells.size() != header.size()) {
      throw DataError(where + ": expected " + std::to_string(header.size()) + " cells, found " +
                      std::to_string(cells.size()));
    }
    for (std::size_t i = 0; i < sensor_cols.size(); ++i) {
      double v = 0.0;
      const auto& cell = cells[sensor_cols[i]];
      if (!parse_double(cell, v)) {
        throw DataError(where + ", column \"" + header[sensor_cols[i]] + "\": non-numeric value \"" + cell + "\"");
      }
      columns[i].push_back(v);
    }
    if (ts_col >= 0) s.timestamps.push_back(cells[static_cast<std::size_t>(ts_col)]);
    if (label_col >= 0) {
      const auto& cell = cells[static_cast<std::size_t>(label_col)];
      double v = 0.0;
      if (!parse_double(cell, v) || (v != 0.0 && v != 1.0)) {
        throw DataError(where + ", column \"label\": expected 0 or 1, found \"" + cell + "\"");
      }
      s.labels.push_back(static_cast<int>(v));
    }
  }
  if (row == 0) throw DataError(path.string() + ": no data rows");
  for (auto& col : columns) s.values.insert(s.values.end(), col.begin(), col.end());
  return s;
}

void write_csv(const std::filesystem::path& path, const RawSeries& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const bool ts = !series.timestamps.empty();
  if (ts) out << "timestamp,";
  for (std::size_t n = 0; n < series.sensors(); ++n) out << (n ? "," : "") << series.sensor_names[n];
  if (series.has_labels()) out << ",label";
  out << '\n';
  for (std::size_t t = 0; t < series.length(); ++t) {
    if (ts) out << series.timestamps[t] << ',';
    for (std::size_t n = 0; n < series.sensors(); ++n) out << (n ? "," : "") << format_double(series.at(n, t));
    if (series.has_labels()) out << ',' << series.labels[t];
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

RawSeries downsample_median(const RawSeries& series, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("downsample factor must be >= 1");
  if (factor == 1) return series;
  const std::size_t len = series.length();
  const std::size_t blocks = (len + factor - 1) / factor;
  RawSeries out;
  out.sensor_names = series.sensor_names;
  out.values.resize(series.sensors() * blocks);
  std::vector<double> buf;
  for (std::size_t n = 0; n < series.sensors(); ++n) {
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t end = std::min(len, (b + 1) * factor);
      buf.clear();
      for (std::size_t t = b * factor; t < end; ++t) buf.push_back(series.at(n, t));
      out.values[n * blocks + b] = median(buf);
    }
  }
  for (std::size_t b = 0; b < blocks; ++b) {
    if (!series.timestamps.empty()) out.timestamps.push_back(series.timestamps[b * factor]);
    if (series.has_labels()) {
      const std::size_t end = std::min(len, (b + 1) * factor);
      int m = 0;
      for (std::size_t t = b * factor; t < end; ++t) m = std::max(m, series.labels[t]);
      out.labels.push_back(m);
    }
  }
  return out;
}

NormStats minmax_fit(const RawSeries& train) {
  NormStats st;
  for (std::size_t n = 0; n < train.sensors(); ++n) {
    const auto first = train.values.begin() + static_cast<std::ptrdiff_t>(n * train.length());
    const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(train.length()));
    st.min.push_back(*lo);
    st.max.push_back(*hi);
  }
  return st;
}

RawSeries minmax_apply(const RawSeries& series, const NormStats& stats) {
  if (stats.min.size() != series.sensors()) {
    throw DataError("normalization fitted on " + std::to_string(stats.min.size()) + " sensors, data has " +
                    std::to_string(series.sensors()));
  }
  RawSeries out = series;
  for (std::size_t n = 0; n < series.sensors(); ++n) {
    const double range = stats.max[n] - stats.min[n];
    for (std::size_t t = 0; t < series.length(); ++t) {
      out.at(n, t) = range > 0.0 ? (series.at(n, t) - stats.min[n]) / range : 0.0;
    }
  }
  return out;
}

std::pair<Tensor, Tensor> WindowedDataset::batch(const std::vector<std::size_t>& indices) const {
  const std::size_t b = indices.size();
  const std::size_t hw = sensors * window;
  std::vector<float> x(b * hw), y(b * sensors);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t j = indices[i];
    if (j >= size()) throw std::out_of_range("window index " + std::to_string(j));
    std::copy_n(history.begin() + static_cast<std::ptrdiff_t>(j * hw), hw, x.begin() + static_cast<std::ptrdiff_t>(i * hw));
    std::copy_n(targets.begin() + static_cast<std::ptrdiff_t>(j * sensors), sensors,
                y.begin() + static_cast<std::ptrdiff_t>(i * sensors));
  }
  return {Tensor({b, sensors, window}, std::move(x)), Tensor({b, sensors}, std::move(y))};
}

WindowedDataset WindowedDataset::subset(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw std::out_of_range("window subset past the end");
  WindowedDataset out;
  out.sensors = sensors;
  out.window = window;
  const std::size_t hw = sensors * window;
  out.history.assign(history.begin() + static_cast<std::ptrdiff_t>(begin * hw),
                     history.begin() + static_cast<std::ptrdiff_t>((begin + count) * hw));
  out.targets.assign(targets.begin() + static_cast<std::ptrdiff_t>(begin * sensors),
                     targets.begin() + static_cast<std::ptrdiff_t>((begin + count) * sensors));
  if (!labels.empty()) {
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  return out;
}

WindowedDataset make_windows(const RawSeries& series, std::size_t window) {
  if (window == 0) throw std::invalid_argument("window length must be >= 1");
  const std::size_t len = series.length();
  if (len < window + 1) {
    throw DataError("series of length " + std::to_string(len) + " is shorter than window + 1 = " +
                    std::to_string(window + 1));
  }
  WindowedDataset ds;
  ds.sensors = series.sensors();
  ds.window = window;
  const std::size_t count = len - window;
  ds.history.resize(count * ds.sensors * window);
  ds.targets.resize(count * ds.sensors);
  for (std::size_t j = 0; j < count; ++j) {
    for (std::size_t n = 0; n < ds.sensors; ++n) {
      for (std::size_t k = 0; k < window; ++k) {
        ds.history[(j * ds.sensors + n) * window + k] = static_cast<float>(series.at(n, j + k));
      }
      ds.targets[j * ds.sensors + n] = static_cast<float>(series.at(n, j + window));
    }
    if (series.has_labels()) ds.labels.push_back(series.labels[j + window]);
  }
  return ds;
}

Tensor history_windows(const RawSeries& series, std::size_t window, std::size_t begin, std::size_t count) {
  const std::size_t n_s = series.sensors();
  if (begin + count + window > series.length() + 1 || count == 0) {
    throw std::out_of_range("history windows past the end of the series");
  }
  std::vector<float> x(count * n_s * window);
  for (std::size_t j = 0; j < count; ++j) {
    for (std::size_t n = 0; n < n_s; ++n) {
      for (std::size_t k = 0; k < window; ++k) {
        x[(j * n_s + n) * window + k] = static_cast<float>(series.at(n, begin + j + k));
      }
    }
  }
  return Tensor({count, n_s, window}, std::move(x));
}

}  // namespace can
