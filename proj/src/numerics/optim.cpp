#include "can/optim.hpp"

#include <cmath>

namespace can {

template <typename T>
AdamState<T> make_adam_state(const std::vector<BasicTensor<T>>& params, AdamOptions options) {
  AdamState<T> st;
  st.options = options;
  for (const auto& p : params) {
    st.m.emplace_back(p.size(), T(0));
    st.v.emplace_back(p.size(), T(0));
  }
  return st;
}

template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, const std::vector<std::span<const T>>& grads,
               AdamState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " +
                     std::to_string(state.m.size()) + " moment buffers");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size() || state.m[i].size() != params[i].size()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " of shape " +
                       to_string(params[i].shape()) + " given gradient of " +
                       std::to_string(grads[i].size()) + " values");
    }
  }
  const auto& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
      const double vj = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      w[j] = static_cast<T>(w[j] - o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon));
    }
  }
}

template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, AdamState<T>& state) {
  std::vector<std::vector<T>> zeros;
  std::vector<std::span<const T>> grads;
  grads.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      grads.emplace_back(p.grad());
    } else {
      zeros.emplace_back(p.size(), T(0));
      grads.emplace_back(zeros.back());
    }
  }
  adam_step(params, grads, state);
}

template <typename T>
void zero_grads(std::vector<BasicTensor<T>>& params) {
  for (auto& p : params) p.zero_grad();
}

template AdamState<float> make_adam_state(const std::vector<BasicTensor<float>>&, AdamOptions);
template AdamState<double> make_adam_state(const std::vector<BasicTensor<double>>&, AdamOptions);
template void adam_step(std::vector<BasicTensor<float>>&, const std::vector<std::span<const float>>&,
                        AdamState<float>&);
template void adam_step(std::vector<BasicTensor<double>>&,
                        const std::vector<std::span<const double>>&, AdamState<double>&);
template void adam_step(std::vector<BasicTensor<float>>&, AdamState<float>&);
template void adam_step(std::vector<BasicTensor<double>>&, AdamState<double>&);
template void zero_grads(std::vector<BasicTensor<float>>&);
template void zero_grads(std::vector<BasicTensor<double>>&);

}  // namespace can
