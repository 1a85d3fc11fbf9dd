#include "amirgrpo/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace amirgrpo::grpo {

Advantages normalize_advantages(std::span<const double> rewards, double std_guard, StdMode mode) {
  if (rewards.size() < 2) throw std::invalid_argument("normalize_advantages: group size must be >= 2");
  if (!(std_guard > 0.0)) throw std::invalid_argument("normalize_advantages: std_guard must be positive");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double denom = mode == StdMode::population ? n : n - 1.0;
  const double sd = std::sqrt(ss / denom);

  Advantages out;
  out.mean = mean;
  out.std = sd;
  out.values.assign(rewards.size(), 0.0);
  if (sd < std_guard) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) out.values[i] = (rewards[i] - mean) / sd;
  return out;
}

RolloutGroup make_group(std::size_t query_id, std::vector<policy::Rollout> rollouts,
                        std::vector<double> rewards, double std_guard, StdMode mode) {
  if (rollouts.size() != rewards.size()) throw std::invalid_argument("make_group: rollouts/rewards size mismatch");
  RolloutGroup g;
  g.query_id = query_id;
  auto adv = normalize_advantages(rewards, std_guard, mode);
  g.advantages = std::move(adv.values);
  g.degenerate = adv.degenerate;
  g.rewards = std::move(rewards);
  for (const auto& r : rollouts) {
    if (r.completion.empty()) throw std::invalid_argument("make_group: empty completion");
    g.old_logp.push_back(r.logp_old);
  }
  g.rollouts = std::move(rollouts);
  return g;
}

namespace {
std::vector<std::vector<double>> logps_under(const RolloutGroup& group, const PolicyParams& params) {
  std::vector<std::vector<double>> out;
  out.reserve(group.size());
  for (const auto& r : group.rollouts) {
    out.push_back(policy::sequence_logprob(params, r.query, r.completion).per_token);
  }
  return out;
}

void check_group(const RolloutGroup& group, std::span<const SequenceLogprob> theta, double epsilon,
                 double gamma) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must be in (0, 1)");
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be non-negative");
  const auto G = group.size();
  if (G == 0 || theta.size() != G || group.advantages.size() != G || group.old_logp.size() != G ||
      group.ref_logp.size() != G) {
    throw std::invalid_argument("rollout group is incomplete");
  }
  for (std::size_t i = 0; i < G; ++i) {
    const auto T = group.rollouts[i].completion.size();
    if (T == 0) throw std::invalid_argument("rollout with zero-length completion");
    if (theta[i].per_token.size() != T || group.old_logp[i].size() != T || group.ref_logp[i].size() != T) {
      throw std::invalid_argument("per-token log-prob length mismatch");
    }
  }
}

// k3 = exp(d) - d - 1 with d = clamp(logp_ref - logp_theta, +-30).
Tensor k3_tokens(Tape& tape, const Tensor& logp_theta, const std::vector<double>& ref,
                 SurrogateStats& stats) {
  Tensor ref_c = Tensor::constant({ref.size()}, ref);
  Tensor d = tape.sub(ref_c, logp_theta);
  for (double v : d.values())
    if (std::abs(v) > kKlExponentClamp) ++stats.kl_clamped;
  Tensor dc = tape.clip(d, -kKlExponentClamp, kKlExponentClamp);
  return tape.add_scalar(tape.sub(tape.exp(dc), dc), -1.0);
}

void fold_kl(const Tensor& k3, SurrogateStats& stats, double& kl_sum) {
  for (double v : k3.values()) {
    stats.min_kl = std::min(stats.min_kl, v);
    stats.max_kl = std::max(stats.max_kl, v);
    kl_sum += v;
  }
}
}  // namespace

void attach_behavior(RolloutGroup& group, const PolicyParams& params) { group.old_logp = logps_under(group, params); }

void attach_reference(RolloutGroup& group, const PolicyParams& params) { group.ref_logp = logps_under(group, params); }

double kl_k3(double logp_ref, double logp_theta, bool* clamped) {
  double d = logp_ref - logp_theta;
  const bool hit = std::abs(d) > kKlExponentClamp;
  if (clamped) *clamped = hit;
  d = std::clamp(d, -kKlExponentClamp, kKlExponentClamp);
  return std::exp(d) - d - 1.0;
}

double normalized_sum(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s * (1.0 / static_cast<double>(values.size()));
}

std::vector<SequenceLogprob> policy_logprobs(Tape& tape, const PolicyParams& theta, const RolloutGroup& group) {
  std::vector<SequenceLogprob> out;
  out.reserve(group.size());
  for (const auto& r : group.rollouts) out.push_back(policy::sequence_logprob(tape, theta, r.query, r.completion));
  return out;
}

ObjectiveTerm grpo_loss(Tape& tape, const RolloutGroup& group, std::span<const SequenceLogprob> theta,
                        double epsilon, double gamma) {
  check_group(group, theta, epsilon, gamma);
  ObjectiveTerm out;
  auto& stats = out.stats;
  stats.min_kl = std::numeric_limits<double>::infinity();
  stats.max_kl = -std::numeric_limits<double>::infinity();
  double kl_sum = 0.0, ratio_sum = 0.0;
  std::size_t clipped = 0;
  std::vector<Tensor> per_rollout;
  per_rollout.reserve(group.size());

  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& lp = theta[i].per_token;
    const auto& old = group.old_logp[i];
    const double adv = group.advantages[i];
    Tensor ratio = tape.exp(tape.sub(lp, Tensor::constant({old.size()}, old)));
    Tensor unclipped = tape.scale(ratio, adv);
    Tensor clipped_term = tape.scale(tape.clip(ratio, 1.0 - epsilon, 1.0 + epsilon), adv);
    Tensor surrogate = tape.minimum(unclipped, clipped_term);
    Tensor k3 = k3_tokens(tape, lp, group.ref_logp[i], stats);
    Tensor per_token = tape.sub(surrogate, tape.scale(k3, gamma));
    per_rollout.push_back(tape.mean(per_token));

    fold_kl(k3, stats, kl_sum);
    for (double r : ratio.values()) {
      ratio_sum += r;
      if (r < 1.0 - epsilon || r > 1.0 + epsilon) ++clipped;
    }
    stats.tokens += old.size();
  }
  out.loss = tape.scale(tape.mean(tape.stack(per_rollout)), -1.0);
  const double n = static_cast<double>(stats.tokens);
  stats.mean_kl = kl_sum / n;
  stats.mean_ratio = ratio_sum / n;
  stats.clip_fraction = static_cast<double>(clipped) / n;
  return out;
}

ObjectiveTerm gspo_loss(Tape& tape, const RolloutGroup& group, std::span<const SequenceLogprob> theta,
                        double epsilon, double gamma) {
  check_group(group, theta, epsilon, gamma);
  ObjectiveTerm out;
  auto& stats = out.stats;
  stats.min_kl = std::numeric_limits<double>::infinity();
  stats.max_kl = -std::numeric_limits<double>::infinity();
  double kl_sum = 0.0, ratio_sum = 0.0;
  std::size_t clipped = 0;
  std::vector<Tensor> per_rollout;
  per_rollout.reserve(group.size());

  for (std::size_t i = 0; i < group.size(); ++i) {
    const double adv = group.advantages[i];
    const double old_norm = normalized_sum(group.old_logp[i]);
    Tensor ratio = tape.exp(tape.add_scalar(theta[i].normalized, -old_norm));
    Tensor unclipped = tape.scale(ratio, adv);
    Tensor clipped_term = tape.scale(tape.clip(ratio, 1.0 - epsilon, 1.0 + epsilon), adv);
    Tensor surrogate = tape.minimum(unclipped, clipped_term);
    Tensor k3 = k3_tokens(tape, theta[i].per_token, group.ref_logp[i], stats);
    per_rollout.push_back(tape.sub(surrogate, tape.scale(tape.mean(k3), gamma)));

    fold_kl(k3, stats, kl_sum);
    const double r = ratio.item();
    ratio_sum += r;
    if (r < 1.0 - epsilon || r > 1.0 + epsilon) ++clipped;
    stats.tokens += group.old_logp[i].size();
  }
  out.loss = tape.scale(tape.mean(tape.stack(per_rollout)), -1.0);
  stats.mean_kl = kl_sum / static_cast<double>(stats.tokens);
  stats.mean_ratio = ratio_sum / static_cast<double>(group.size());
  stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(group.size());
  return out;
}

ObjectiveTerm grpo_loss(Tape& tape, RolloutGroup group, const PolicyParams& theta,
                        const PolicyParams& theta_old, const PolicyParams& reference, double epsilon,
                        double gamma) {
  attach_behavior(group, theta_old);
  attach_reference(group, reference);
  auto lp = policy_logprobs(tape, theta, group);
  return grpo_loss(tape, group, lp, epsilon, gamma);
}

ObjectiveTerm gspo_loss(Tape& tape, RolloutGroup group, const PolicyParams& theta,
                        const PolicyParams& theta_old, const PolicyParams& reference, double epsilon,
                        double gamma) {
  attach_behavior(group, theta_old);
  attach_reference(group, reference);
  auto lp = policy_logprobs(tape, theta, group);
  return gspo_loss(tape, group, lp, epsilon, gamma);
}

}  // namespace amirgrpo::grpo
