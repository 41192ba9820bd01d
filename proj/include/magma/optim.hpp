#pragma once

#include <cstddef>
#include <vector>

#include "magma/tensor.hpp"

namespace magma {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied as p -= lr·wd·p
};

/// Moment estimates for one parameter tensor.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
  AdamHyper hyper;
};

/// One bias-corrected Adam update of `param` from `grad`. Moments are kept in
/// double regardless of the parameter precision.
template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamState& state, double lr);

/// Applies adam_step to a tensor using its accumulated gradient; a tensor
/// without gradient is treated as having a zero gradient.
template <typename T>
void adam_step(Tensor<T>& param, AdamState& state, double lr);

/// Cosine decay from base_lr at step 0 to 0.1·base_lr at total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

}  // namespace magma
