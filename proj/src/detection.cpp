#include "can/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "can/ops.hpp"

namespace can {

Tensor64 prediction_errors(const Tensor64& pred, const Tensor64& actual) {
  if (pred.shape() != actual.shape()) throw ShapeError("prediction_errors", pred.shape(), actual.shape());
  std::vector<double> out(pred.size());
  const auto p = pred.data();
  const auto a = actual.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(p[i] - a[i]);
  return Tensor64(pred.shape(), std::move(out));
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

ErrorCalibration calibrate_errors(const Tensor64& calibration) {
  if (calibration.rank() != 2) throw RankError("calibration errors must be [N, T]");
  const std::size_t n = calibration.dim(0), t = calibration.dim(1);
  const auto d = calibration.data();
  ErrorCalibration c;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(d.begin() + static_cast<std::ptrdiff_t>(i * t),
                            d.begin() + static_cast<std::ptrdiff_t>((i + 1) * t));
    c.mu.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(t));
    c.iqr.push_back(quantile(row, 0.75) - quantile(row, 0.25));
  }
  return c;
}

Tensor64 normalize_errors(const Tensor64& err, const ErrorCalibration& cal, double eps) {
  if (err.rank() != 2 || err.dim(0) != cal.mu.size()) {
    throw ShapeError("normalize_errors: " + std::to_string(cal.mu.size()) + " calibrated sensors for errors " +
                     to_string(err.shape()));
  }
  const std::size_t n = err.dim(0), t = err.dim(1);
  std::vector<double> out(err.size());
  const auto e = err.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double scale = std::max(cal.iqr[i], eps);
    for (std::size_t j = 0; j < t; ++j) out[i * t + j] = (e[i * t + j] - cal.mu[i]) / scale;
  }
  return Tensor64(err.shape(), std::move(out));
}

Tensor64 normalize_errors(const Tensor64& err, const Tensor64& calibration, double eps) {
  return normalize_errors(err, calibrate_errors(calibration), eps);
}

ScoreSeries anomaly_scores(const Tensor64& normalized, std::size_t k_s) {
  if (k_s == 0) throw std::invalid_argument("k_s must be >= 1");
  if (normalized.rank() != 2) throw RankError("anomaly_scores expects [N, T]");
  const std::size_t n = normalized.dim(0), t = normalized.dim(1);
  const std::size_t k = std::min(k_s, n);
  const auto s = normalized.data();
  ScoreSeries out;
  out.k_s = k_s;
  out.scores.resize(t);
  out.sensors.resize(t);
  std::vector<std::size_t> idx(n);
  for (std::size_t j = 0; j < t; ++j) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a * t + j] > s[b * t + j]; });
    double total = 0.0;
    for (std::size_t r = 0; r < k; ++r) total += s[idx[r] * t + j];
    out.scores[j] = total;
    out.sensors[j].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

std::vector<int> point_adjust(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("point_adjust: " + std::to_string(pred.size()) + " predictions for " +
                                std::to_string(truth.size()) + " labels");
  }
  std::vector<int> out = pred;
  std::size_t t = 0;
  while (t < truth.size()) {
    if (!truth[t]) {
      ++t;
      continue;
    }
    std::size_t end = t;
    bool hit = false;
    for (; end < truth.size() && truth[end]; ++end) {
      if (pred[end]) hit = true;
    }
    if (hit) std::fill(out.begin() + static_cast<std::ptrdiff_t>(t), out.begin() + static_cast<std::ptrdiff_t>(end), 1);
    t = end;
  }
  return out;
}

Confusion metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  Confusion c{tp, fp, fn, tn};
  c.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  c.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  c.f1 = c.precision + c.recall > 0.0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
  return c;
}

Confusion confusion_metrics(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("confusion_metrics: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && truth[i]) ++tp;
    else if (pred[i]) ++fp;
    else if (truth[i]) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

DetectionReport apply_threshold(const std::vector<double>& scores, const std::vector<int>& truth, double threshold) {
  if (scores.size() != truth.size()) throw std::invalid_argument("apply_threshold: length mismatch");
  DetectionReport r;
  r.threshold = threshold;
  r.scores = scores;
  r.truth = truth;
  r.raw.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) r.raw[i] = scores[i] > threshold ? 1 : 0;
  r.adjusted = point_adjust(r.raw, truth);
  r.counts = confusion_metrics(r.adjusted, truth);
  return r;
}

DetectionReport threshold_grid_search(const std::vector<double>& scores, const std::vector<int>& truth) {
  if (scores.size() != truth.size()) throw std::invalid_argument("threshold_grid_search: length mismatch");
  if (std::none_of(truth.begin(), truth.end(), [](int v) { return v != 0; })) {
    throw std::invalid_argument("threshold_grid_search: ground truth has no anomalies");
  }
  // Segment maxima decide point-adjusted hits; normal scores decide false alarms.
  std::vector<std::pair<double, std::size_t>> segments;
  std::vector<double> normal, anomalous;
  std::size_t positives = 0;
  for (std::size_t t = 0; t < truth.size();) {
    if (!truth[t]) {
      normal.push_back(scores[t++]);
      continue;
    }
    double mx = scores[t];
    const std::size_t start = t;
    while (t < truth.size() && truth[t]) {
      mx = std::max(mx, scores[t]);
      anomalous.push_back(scores[t++]);
    }
    segments.emplace_back(mx, t - start);
    positives += t - start;
  }
  std::sort(segments.begin(), segments.end());
  std::vector<std::size_t> suffix(segments.size() + 1, 0);
  for (std::size_t i = segments.size(); i-- > 0;) suffix[i] = suffix[i + 1] + segments[i].second;
  std::vector<double> seg_max;
  for (const auto& s : segments) seg_max.push_back(s.first);
  std::sort(normal.begin(), normal.end());
  std::sort(anomalous.begin(), anomalous.end());
  auto above = [](const std::vector<double>& sorted, double th) {
    return static_cast<std::size_t>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), th));
  };

  std::vector<double> unique = scores;
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  std::vector<double> candidates{unique.front() - 1.0};
  for (std::size_t i = 0; i + 1 < unique.size(); ++i) candidates.push_back(unique[i] + (unique[i + 1] - unique[i]) / 2.0);

  double best_theta = candidates.front();
  double best_f1 = -1.0, best_raw = -1.0;
  for (double th : candidates) {
    const std::size_t tp = suffix[static_cast<std::size_t>(std::upper_bound(seg_max.begin(), seg_max.end(), th) -
                                                           seg_max.begin())];
    const std::size_t fp = above(normal, th);
    const double f1 = metrics_from_counts(tp, fp, positives - tp, normal.size() - fp).f1;
    const std::size_t raw_tp = above(anomalous, th);
    const double raw_f1 = metrics_from_counts(raw_tp, fp, positives - raw_tp, normal.size() - fp).f1;
    if (f1 > best_f1 || (f1 == best_f1 && raw_f1 >= best_raw)) {
      best_f1 = f1;
      best_raw = raw_f1;
      best_theta = th;
    }
  }
  return apply_threshold(scores, truth, best_theta);
}

Calibration parse_calibration(const std::string& name) {
  if (name == "stream") return Calibration::kStream;
  if (name == "train") return Calibration::kTrain;
  throw std::invalid_argument("unknown calibration '" + name + "' (expected stream|train)");
}

std::string to_string(Calibration c) { return c == Calibration::kStream ? "stream" : "train"; }

SeriesPredictions predict_series(const CanModel<float>& model, const RawSeries& series, std::size_t batch_size) {
  const std::size_t k = model.config.window;
  const std::size_t n = model.config.sensors;
  if (series.sensors() != n) {
    throw DataError("data has " + std::to_string(series.sensors()) + " sensors, model expects " + std::to_string(n));
  }
  if (series.length() < k + 1) {
    throw DataError("series of length " + std::to_string(series.length()) + " is shorter than window + 1");
  }
  const std::size_t len = series.length();
  const std::size_t steps = len - k;
  const bool rec = model.config.rec_decoder;
  std::vector<double> pred(n * steps), actual(n * steps), recon(rec ? n * steps : 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < steps; ++s) actual[i * steps + s] = series.at(i, k + s);
  }

  NoGradGuard guard;
  const std::size_t windows = steps + 1;  // window j covers [j, j+K)
  for (std::size_t start = 0; start < windows; start += batch_size) {
    const std::size_t count = std::min(batch_size, windows - start);
    const auto x = history_windows(series, k, start, count);
    const auto out = can_forward(x, model);
    const auto yp = out.y_pred.data();
    for (std::size_t b = 0; b < count; ++b) {
      const std::size_t j = start + b;
      if (j < steps) {
        for (std::size_t i = 0; i < n; ++i) pred[i * steps + j] = yp[b * n + i];
      }
      if (rec && j >= 1) {
        const auto yr = out.y_rec.data();
        for (std::size_t i = 0; i < n; ++i) recon[i * steps + (j - 1)] = yr[(b * n + i) * k + (k - 1)];
      }
    }
  }
  SeriesPredictions sp;
  sp.pred = Tensor64({n, steps}, std::move(pred));
  sp.actual = Tensor64({n, steps}, std::move(actual));
  if (rec) sp.rec = Tensor64({n, steps}, std::move(recon));
  return sp;
}

Evaluation evaluate(const CanModel<float>& model, const RawSeries& test, const DetectConfig& config,
                    const RawSeries* calibration) {
  if (!test.has_labels()) throw DataError("evaluation data has no label column");
  if (config.can_plus && !model.config.rec_decoder) {
    throw std::invalid_argument("the fused score needs a model with the reconstruction decoder");
  }
  const std::size_t k = model.config.window;
  const auto sp = predict_series(model, test, config.batch_size);
  const auto err = prediction_errors(sp.pred, sp.actual);

  SeriesPredictions cal_sp;
  if (config.calibration == Calibration::kTrain) {
    if (!calibration) throw std::invalid_argument("train calibration requested without training data");
    cal_sp = predict_series(model, *calibration, config.batch_size);
  }
  const bool from_train = config.calibration == Calibration::kTrain;

  Evaluation ev;
  ev.first_timestamp = k;
  ev.pred_scores =
      anomaly_scores(normalize_errors(err, from_train ? prediction_errors(cal_sp.pred, cal_sp.actual) : err), config.k_s);
  std::vector<double> scores = ev.pred_scores.scores;
  if (config.can_plus) {
    const auto rec_err = prediction_errors(sp.rec, sp.actual);
    const auto rec_scores =
        anomaly_scores(normalize_errors(rec_err, from_train ? prediction_errors(cal_sp.rec, cal_sp.actual) : rec_err),
                       config.k_s);
    for (std::size_t t = 0; t < scores.size(); ++t) scores[t] += config.rec_weight * rec_scores.scores[t];
  }
  const std::vector<int> truth(test.labels.begin() + static_cast<std::ptrdiff_t>(k), test.labels.end());
  ev.report = threshold_grid_search(scores, truth);
  return ev;
}

}  // namespace can
