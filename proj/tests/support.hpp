#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "amirgrpo/grpo.hpp"
#include "amirgrpo/policy.hpp"
#include "amirgrpo/reward.hpp"
#include "amirgrpo/rng.hpp"
#include "amirgrpo/vocab.hpp"

namespace testsupport {

using namespace amirgrpo;

// Small enough for finite differences to stay cheap (well under 5k parameters).
inline policy::ModelShape tiny_shape(const policy::Vocabulary& vocab) {
  return {vocab.size(), 8, 8, 1, 24};
}

inline policy::PolicyParams random_params(const policy::ModelShape& shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  auto p = policy::PolicyParams::initialize(shape, rng);
  if (scale != 1.0) {
    for (auto& t : p.tensors()) {
      for (double& v : t.mutable_values()) v *= scale;
    }
  }
  return p;
}

// Copy of `base` with Gaussian noise of the given size added to every value.
inline policy::PolicyParams jitter(const policy::PolicyParams& base, Rng& rng, double size) {
  auto p = base.snapshot();
  for (auto& t : p.tensors()) {
    for (double& v : t.mutable_values()) v += rng.normal(0.0, size);
  }
  return p;
}

inline std::vector<double> random_rewards(Rng& rng, std::size_t g, int levels) {
  std::vector<double> r(g);
  for (double& v : r) v = levels > 0 ? static_cast<double>(rng.integer(0, levels - 1)) * 0.5 : rng.uniform() * 4.0;
  return r;
}

// A group sampled from `behavior` on a short random query; rewards are random.
inline grpo::RolloutGroup sample_group(const policy::PolicyParams& behavior, const policy::PolicyParams& reference,
                                       const policy::Vocabulary& vocab, Rng& rng, std::size_t g,
                                       std::size_t max_len = 6) {
  policy::TokenIds query{vocab.id(std::to_string(rng.integer(0, 9))), vocab.id("+"),
                         vocab.id(std::to_string(rng.integer(0, 9))), vocab.id("=")};
  std::vector<policy::Rollout> rollouts;
  for (std::size_t i = 0; i < g; ++i) {
    rollouts.push_back(policy::sample_completion(behavior, vocab, query, {1.0, 1.0, max_len}, rng));
  }
  auto rewards = random_rewards(rng, g, 0);
  auto group = grpo::make_group(0, std::move(rollouts), std::move(rewards), 1e-4);
  grpo::attach_behavior(group, behavior);
  grpo::attach_reference(group, reference);
  return group;
}

struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
};

// Compares tape gradients of loss(params) against central differences,
// using the norm-wise relative error ||g - fd|| / max(||g||, ||fd||, tiny).
inline GradCheck check_gradient(policy::PolicyParams& params,
                                const std::function<diffmath::Tensor(diffmath::Tape&)>& loss, double h = 1e-6) {
  for (auto& t : params.tensors()) t.zero_grad();
  {
    diffmath::Tape tape;
    tape.backward(loss(tape));
  }
  double diff2 = 0.0, g2 = 0.0, fd2 = 0.0;
  for (auto& t : params.tensors()) {
    auto values = t.mutable_values();
    std::vector<double> grad(t.grad().begin(), t.grad().end());
    if (grad.empty()) grad.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + h;
      double up, down;
      {
        auto tape = diffmath::Tape::inference();
        up = loss(tape).item();
      }
      values[i] = keep - h;
      {
        auto tape = diffmath::Tape::inference();
        down = loss(tape).item();
      }
      values[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      diff2 += (grad[i] - fd) * (grad[i] - fd);
      g2 += grad[i] * grad[i];
      fd2 += fd * fd;
    }
    t.zero_grad();
  }
  const double denom = std::max({std::sqrt(g2), std::sqrt(fd2), 1e-12});
  return {std::sqrt(diff2) / denom, std::sqrt(g2)};
}

// True when some token or sequence ratio sits near a clip boundary, where
// the surrogate is not differentiable.
inline bool near_clip_kink(const grpo::RolloutGroup& group, const policy::PolicyParams& theta, double epsilon,
                           bool sequence, double tol = 1e-3) {
  for (std::size_t i = 0; i < group.size(); ++i) {
    auto lp = policy::sequence_logprob(theta, group.rollouts[i].query, group.rollouts[i].completion);
    const auto& old = group.old_logp[i];
    std::vector<double> ratios;
    if (sequence) {
      double s = 0.0;
      for (std::size_t t = 0; t < old.size(); ++t) s += lp.per_token[t] - old[t];
      ratios.push_back(std::exp(s / static_cast<double>(old.size())));
    } else {
      for (std::size_t t = 0; t < old.size(); ++t) ratios.push_back(std::exp(lp.per_token[t] - old[t]));
    }
    for (double r : ratios) {
      if (std::abs(r - (1.0 + epsilon)) < tol || std::abs(r - (1.0 - epsilon)) < tol) return true;
    }
  }
  return false;
}

}  // namespace testsupport
