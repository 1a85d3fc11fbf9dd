#include "amirgrpo/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace amirgrpo::diffmath {

void adamw_step(std::span<Tensor> params, OptimizerState& state) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].has_grad()) {
      throw std::logic_error("adamw_step: parameter " + std::to_string(p) + " has no gradient");
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::logic_error("adamw_step: optimizer state does not match parameter list");
  }

  const auto& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t p = 0; p < params.size(); ++p) {
    auto values = params[p].mutable_values();
    auto grad = params[p].mutable_grad();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    if (m.size() != values.size()) throw std::logic_error("adamw_step: moment shape mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      values[i] -= c.lr * c.weight_decay * values[i];
      values[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
    params[p].zero_grad();
  }
}

double grad_norm(std::span<const Tensor> params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) s += g * g;
  return std::sqrt(s);
}

}  // namespace amirgrpo::diffmath
