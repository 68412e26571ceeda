#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "can/data.hpp"
#include "can/model.hpp"
#include "can/tensor.hpp"

namespace can {

/// |pred - actual| elementwise, [N, T].
Tensor64 prediction_errors(const Tensor64& pred, const Tensor64& actual);

/// Quantile with linear interpolation between order statistics
/// (position q * (n - 1) in the sorted sample).
double quantile(std::vector<double> values, double q);

struct ErrorCalibration {
  std::vector<double> mu;   // per-sensor mean error
  std::vector<double> iqr;  // per-sensor Q3 - Q1
};

ErrorCalibration calibrate_errors(const Tensor64& calibration);

/// (err - mu_n) / max(iqr_n, eps) with statistics from `calibration`
/// ([N, T_cal]).
Tensor64 normalize_errors(const Tensor64& err, const Tensor64& calibration, double eps = 1e-6);
Tensor64 normalize_errors(const Tensor64& err, const ErrorCalibration& calibration, double eps = 1e-6);

struct ScoreSeries {
  std::vector<double> scores;                     // one per timestamp
  std::size_t k_s = 0;
  std::vector<std::vector<std::size_t>> sensors;  // contributing indices, ascending by rank
};

/// Per timestamp, the sum of the k_s largest normalized deviations; equal
/// values go to the lower sensor index.
ScoreSeries anomaly_scores(const Tensor64& normalized, std::size_t k_s);

/// Marks every ground-truth segment containing a predicted point as fully
/// predicted. Predictions on normal points are left alone.
std::vector<int> point_adjust(const std::vector<int>& pred, const std::vector<int>& truth);

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

Confusion confusion_metrics(const std::vector<int>& pred, const std::vector<int>& truth);
/// Precision/recall/F1 from counts; each is 0 when its denominator is 0.
Confusion metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);

struct DetectionReport {
  double threshold = 0.0;
  std::vector<double> scores;
  std::vector<int> raw;       // scores > threshold
  std::vector<int> adjusted;  // after point-adjust
  std::vector<int> truth;
  Confusion counts;           // on the adjusted predictions
};

/// Candidates are one value below the smallest score and the midpoints of
/// neighbouring distinct scores. Maximizes point-adjusted F1; ties go to
/// the higher unadjusted F1, then to the higher threshold. Throws
/// std::invalid_argument when `truth` has no anomaly.
DetectionReport threshold_grid_search(const std::vector<double>& scores, const std::vector<int>& truth);

/// Builds the report for a fixed threshold.
DetectionReport apply_threshold(const std::vector<double>& scores, const std::vector<int>& truth, double threshold);

enum class Calibration { kStream, kTrain };

Calibration parse_calibration(const std::string& name);
std::string to_string(Calibration c);

struct DetectConfig {
  std::size_t k_s = 2;
  Calibration calibration = Calibration::kStream;
  bool can_plus = false;
  double rec_weight = 0.1;
  std::size_t batch_size = 256;
};

/// Model outputs aligned to timestamps K .. L-1 of a normalized series.
struct SeriesPredictions {
  Tensor64 pred;       // [N, L-K] next-step predictions
  Tensor64 actual;     // [N, L-K]
  Tensor64 rec;        // [N, L-K] reconstruction of the same timestamps; undefined without the decoder
};

/// Runs every window through the model without gradients. The
/// reconstruction of timestamp t is the last slot of the window ending at t.
SeriesPredictions predict_series(const CanModel<float>& model, const RawSeries& normalized, std::size_t batch_size = 256);

struct Evaluation {
  DetectionReport report;
  ScoreSeries pred_scores;
  std::size_t first_timestamp = 0;  // series index of scores[0]
};

/// Scores timestamps K .. L-1 of `test` (normalized, labelled) and searches
/// the threshold. `calibration` supplies normalized training data when the
/// train calibration mode is selected.
Evaluation evaluate(const CanModel<float>& model, const RawSeries& test, const DetectConfig& config,
                    const RawSeries* calibration = nullptr);

}  // namespace can
