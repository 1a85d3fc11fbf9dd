#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "amirgrpo/diffmath.hpp"

namespace amirgrpo::diffmath {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Moments are stored per parameter tensor, in the order the parameters are
// passed to adamw_step.
struct OptimizerState {
  AdamWConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;

  explicit OptimizerState(AdamWConfig cfg = {}) : config(cfg) {}
};

/// One decoupled-weight-decay Adam update. Every parameter must carry a
/// gradient; gradients are zeroed afterwards.
void adamw_step(std::span<Tensor> params, OptimizerState& state);

double grad_norm(std::span<const Tensor> params);

}  // namespace amirgrpo::diffmath
