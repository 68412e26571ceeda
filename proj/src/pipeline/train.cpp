#include "can/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "can/ops.hpp"
#include "can/optim.hpp"

namespace can {

void TrainConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) fail("lr must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay must lie in (0, 1]");
  if (schedule.phi_start < 0.0 || schedule.phi_start > 1.0 || schedule.phi_final < 0.0 || schedule.phi_final > 1.0) {
    fail("phi values must lie in [0, 1]");
  }
  if (patience == 0) fail("patience must be >= 1");
  if (max_epochs == 0) fail("max_epochs must be >= 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0) fail("val_fraction must lie in [0, 1)");
}

namespace {

// sqrt(mean over all axes but the first), averaged over the first.
template <typename T>
BasicTensor<T> windowed_rmse(const BasicTensor<T>& diff, bool batched) {
  if (!batched) return sqrt(mean(square(diff)));
  const std::size_t b = diff.dim(0);
  const auto flat = reshape(square(diff), {b, diff.size() / b});
  return mean(sqrt(mean(flat, -1)));
}

}  // namespace

template <typename T>
BasicTensor<T> prediction_loss(const BasicTensor<T>& y_pred, const BasicTensor<T>& target) {
  if (y_pred.shape() != target.shape()) throw ShapeError("prediction_loss", y_pred.shape(), target.shape());
  if (y_pred.rank() != 1 && y_pred.rank() != 2) throw RankError("prediction_loss expects [N] or [B, N]");
  return windowed_rmse(sub(y_pred, target), y_pred.rank() == 2);
}

template <typename T>
BasicTensor<T> reconstruction_loss(const BasicTensor<T>& y_rec, const BasicTensor<T>& x) {
  if (y_rec.shape() != x.shape()) throw ShapeError("reconstruction_loss", y_rec.shape(), x.shape());
  if (y_rec.rank() != 2 && y_rec.rank() != 3) throw RankError("reconstruction_loss expects [N, K] or [B, N, K]");
  return windowed_rmse(sub(y_rec, x), y_rec.rank() == 3);
}

template <typename T>
BasicTensor<T> joint_loss(const BasicTensor<T>& l_pre, const BasicTensor<T>& l_rec, double phi, double psi) {
  return add(mul_scalar(l_pre, static_cast<T>(phi)), mul_scalar(l_rec, static_cast<T>(psi)));
}

template <typename T>
BasicTensor<T> batch_loss(const CanModel<T>& model, const BasicTensor<T>& x, const BasicTensor<T>& target, double phi,
                          double psi) {
  const auto out = can_forward(x, model);
  const auto l_pre = prediction_loss(out.y_pred, target);
  if (!out.y_rec.defined()) return l_pre;
  return joint_loss(l_pre, reconstruction_loss(out.y_rec, x), phi, psi);
}

bool EarlyStopping::update(std::size_t epoch, double value) {
  improved_ = value < best_;
  if (improved_) {
    best_ = value;
    best_epoch_ = epoch;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

namespace {

double dataset_loss(const CanModel<float>& model, const WindowedDataset& data, double phi, double psi,
                    std::size_t batch_size) {
  NoGradGuard guard;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    const auto [x, y] = data.batch(idx);
    total += static_cast<double>(batch_loss(model, x, y, phi, psi).item()) * static_cast<double>(count);
  }
  return total / static_cast<double>(data.size());
}

std::vector<std::vector<float>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.push_back(p.to_vector());
  return out;
}

}  // namespace

double prediction_rmse(const CanModel<float>& model, const WindowedDataset& data, std::size_t batch_size) {
  return dataset_loss(model, data, 1.0, 0.0, batch_size);
}

TrainResult train(const WindowedDataset& data, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (data.size() == 0) throw DataError("training set has no windows");
  if (data.sensors != config.model.sensors || data.window != config.model.window) {
    throw DataError("training windows are " + std::to_string(data.sensors) + " sensors x " +
                    std::to_string(data.window) + " steps, model expects " + std::to_string(config.model.sensors) +
                    " x " + std::to_string(config.model.window));
  }
  std::size_t n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(data.size())));
  if (config.val_fraction > 0.0) n_val = std::max<std::size_t>(n_val, 1);
  if (n_val >= data.size()) throw DataError("too few windows for a validation split");
  const std::size_t n_train = data.size() - n_val;
  const auto train_set = data.subset(0, n_train);
  const auto val_set = n_val > 0 ? data.subset(n_train, n_val) : train_set;

  TrainResult result;
  result.model = init_model<float>(config.model, config.seed);
  auto params = result.model.parameters();
  AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  auto state = make_adam_state(params, opts);
  std::mt19937_64 rng(config.seed + 1);
  EarlyStopping stopper(config.patience);
  auto best = snapshot(params);
  const double phi_val = config.schedule.phi_final;

  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double phi = config.schedule.phi(epoch);
    const double psi = config.schedule.psi(epoch);
    state.options.learning_rate = config.learning_rate * std::pow(config.lr_decay, static_cast<double>(epoch - 1));
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n_train - start);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + count));
      const auto [x, y] = train_set.batch(idx);
      zero_grads(params);
      const auto loss = batch_loss(result.model, x, y, phi, psi);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch starting at window " +
                           std::to_string(start) + ": loss is " + std::to_string(value));
      }
      loss.backward();
      adam_step(params, state);
      total += value * static_cast<double>(count);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = total / static_cast<double>(n_train);
    entry.val_loss = dataset_loss(result.model, val_set, phi_val, 1.0 - phi_val, 256);
    entry.phi = phi;
    entry.lr = state.options.learning_rate;
    if (!std::isfinite(entry.val_loss)) {
      throw NumericError("validation loss is not finite at epoch " + std::to_string(epoch));
    }
    result.log.push_back(entry);
    const bool stop = stopper.update(epoch, entry.val_loss);
    if (stopper.improved()) best = snapshot(params);
    if (on_epoch) on_epoch(entry);
    if (stop) break;
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].mutable_data();
    std::copy(best[i].begin(), best[i].end(), dst.begin());
  }
  zero_grads(params);
  result.best_epoch = stopper.best_epoch();
  return result;
}

#define CAN_INSTANTIATE_LOSSES(T)                                                                       \
  template BasicTensor<T> prediction_loss(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> reconstruction_loss(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> joint_loss(const BasicTensor<T>&, const BasicTensor<T>&, double, double);    \
  template BasicTensor<T> batch_loss(const CanModel<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                     double, double);

CAN_INSTANTIATE_LOSSES(float)
CAN_INSTANTIATE_LOSSES(double)

#undef CAN_INSTANTIATE_LOSSES

}  // namespace can
