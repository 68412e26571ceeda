#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "can/tensor.hpp"

namespace can {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers, one pair per parameter, plus the step count.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t step = 0;
  AdamOptions options;
};

template <typename T>
AdamState<T> make_adam_state(const std::vector<BasicTensor<T>>& params, AdamOptions options = {});

/// Bias-corrected Adam update of `params` in place using explicit gradients.
template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, const std::vector<std::span<const T>>& grads,
               AdamState<T>& state);

/// Same, reading each parameter's accumulated grad (missing grad = zero).
template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, AdamState<T>& state);

template <typename T>
void zero_grads(std::vector<BasicTensor<T>>& params);

}  // namespace can
