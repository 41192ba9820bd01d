#include "magma/optim.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace magma {

template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamState& state, double lr) {
  if (grad.size() != param.size())
    throw ShapeError(fmt::format("adam_step: {} gradients for {} parameters", grad.size(), param.size()));
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size())
    throw ShapeError(fmt::format("adam_step: state sized for {} parameters, got {}", state.m.size(), param.size()));
  const auto& h = state.hyper;
  state.step += 1;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    double p = static_cast<double>(param[i]);
    p -= lr * mhat / (std::sqrt(vhat) + h.eps);
    if (h.weight_decay != 0.0) p -= lr * h.weight_decay * static_cast<double>(param[i]);
    param[i] = static_cast<T>(p);
  }
}

template <typename T>
void adam_step(Tensor<T>& param, AdamState& state, double lr) {
  if (param.has_grad()) {
    adam_step<T>(param.mutable_data(), param.grad(), state, lr);
  } else {
    std::vector<T> zeros(param.numel(), T(0));
    adam_step<T>(param.mutable_data(), zeros, state, lr);
  }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (step > total_steps) throw UsageError(fmt::format("cosine_lr: step {} beyond total {}", step, total_steps));
  if (total_steps == 0) return base_lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamState&, double);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState&, double);
template void adam_step<float>(Tensor<float>&, AdamState&, double);
template void adam_step<double>(Tensor<double>&, AdamState&, double);

}  // namespace magma
