#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "can/data.hpp"
#include "can/model.hpp"

namespace can {

/// phi weights the prediction loss, psi = 1 - phi the reconstruction loss.
struct LossSchedule {
  double phi_start = 0.2;
  double phi_final = 0.8;
  std::size_t switch_after = 4;  // epochs run with phi_start

  double phi(std::size_t epoch) const { return epoch <= switch_after ? phi_start : phi_final; }
  double psi(std::size_t epoch) const { return 1.0 - phi(epoch); }
};

struct TrainConfig {
  ModelConfig model;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double lr_decay = 0.95;
  LossSchedule schedule;
  std::size_t patience = 5;
  std::size_t max_epochs = 100;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// RMSE per window over the trailing axes, averaged over windows.
/// y_pred/target: [N] or [B, N].
template <typename T>
BasicTensor<T> prediction_loss(const BasicTensor<T>& y_pred, const BasicTensor<T>& target);
/// y_rec/x: [N, K] or [B, N, K].
template <typename T>
BasicTensor<T> reconstruction_loss(const BasicTensor<T>& y_rec, const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> joint_loss(const BasicTensor<T>& l_pre, const BasicTensor<T>& l_rec, double phi, double psi);

/// Joint loss of one batch. Without the reconstruction decoder only the
/// prediction term remains.
template <typename T>
BasicTensor<T> batch_loss(const CanModel<T>& model, const BasicTensor<T>& x, const BasicTensor<T>& target, double phi,
                          double psi);

/// Stops once `patience` consecutive epochs fail to improve on the best
/// value seen.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records the value for `epoch` (1-based); returns true when training
  /// should stop.
  bool update(std::size_t epoch, double value);
  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_value() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double phi = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  CanModel<float> model;  // best-validation parameters
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
};

/// Mean per-window prediction RMSE over the dataset, without gradients.
double prediction_rmse(const CanModel<float>& model, const WindowedDataset& data, std::size_t batch_size = 256);

/// Holds out the last `val_fraction` of windows for validation. Validation
/// loss uses the final-phase weights so epochs on both sides of the
/// schedule switch compare. Throws NumericError on a non-finite loss.
TrainResult train(const WindowedDataset& data, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace can
