#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "amirgrpo/diffmath.hpp"
#include "amirgrpo/policy.hpp"
#include "amirgrpo/reward.hpp"

namespace amirgrpo::grpo {

using diffmath::Tape;
using diffmath::Tensor;
using policy::PolicyParams;
using policy::SequenceLogprob;

enum class StdMode { population, sample };

struct Advantages {
  std::vector<double> values;
  bool degenerate = false;
  double mean = 0.0;
  double std = 0.0;
};

/// (r_i - mean) / std over one group. Groups whose std falls below
/// `std_guard` are flagged degenerate and get all-zero advantages.
Advantages normalize_advantages(std::span<const double> rewards, double std_guard,
                                StdMode mode = StdMode::population);

// The G completions sampled for one query, with everything the objectives
// need as constants: rewards, advantages, and per-token log-probs under the
// behavior (theta_old) and reference policies.
struct RolloutGroup {
  std::size_t query_id = 0;
  std::vector<policy::Rollout> rollouts;
  std::vector<tasks::RewardBreakdown> breakdowns;
  std::vector<double> rewards;
  std::vector<double> advantages;
  bool degenerate = false;
  std::vector<std::vector<double>> old_logp;
  std::vector<std::vector<double>> ref_logp;

  std::size_t size() const { return rollouts.size(); }
};

// Fills rewards and advantages; old_logp starts as the log-probs recorded
// at sampling time.
RolloutGroup make_group(std::size_t query_id, std::vector<policy::Rollout> rollouts,
                        std::vector<double> rewards, double std_guard,
                        StdMode mode = StdMode::population);

// Recomputes old_logp / ref_logp as full-softmax log-probs under `params`.
void attach_behavior(RolloutGroup& group, const PolicyParams& params);
void attach_reference(RolloutGroup& group, const PolicyParams& params);

/// k3 estimate r - log r - 1 with r = exp(logp_ref - logp_theta). The
/// exponent is clamped to +-30; `clamped` reports when that happened.
double kl_k3(double logp_ref, double logp_theta, bool* clamped = nullptr);

inline constexpr double kKlExponentClamp = 30.0;

struct SurrogateStats {
  std::size_t tokens = 0;
  double mean_kl = 0.0;
  double min_kl = 0.0;
  double max_kl = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;  // ratios strictly outside [1 - eps, 1 + eps]
  std::size_t kl_clamped = 0;
};

struct ObjectiveTerm {
  Tensor loss;  // negated objective, ready to minimize
  SurrogateStats stats;
};

// Differentiable log-probs of every completion in the group under theta.
std::vector<SequenceLogprob> policy_logprobs(Tape& tape, const PolicyParams& theta,
                                             const RolloutGroup& group);

/// Negated token-level clipped surrogate with per-token k3 penalty, averaged
/// over tokens within a completion and then over the group.
ObjectiveTerm grpo_loss(Tape& tape, const RolloutGroup& group, std::span<const SequenceLogprob> theta,
                        double epsilon, double gamma);

/// Sequence-level variant: one ratio per completion, exp(mean token log-ratio),
/// clipped with the same epsilon. The k3 penalty stays per token.
ObjectiveTerm gspo_loss(Tape& tape, const RolloutGroup& group, std::span<const SequenceLogprob> theta,
                        double epsilon, double gamma);

// Conveniences that derive behavior and reference log-probs from snapshots.
ObjectiveTerm grpo_loss(Tape& tape, RolloutGroup group, const PolicyParams& theta,
                        const PolicyParams& theta_old, const PolicyParams& reference, double epsilon,
                        double gamma);
ObjectiveTerm gspo_loss(Tape& tape, RolloutGroup group, const PolicyParams& theta,
                        const PolicyParams& theta_old, const PolicyParams& reference, double epsilon,
                        double gamma);

// sum(values) * (1 / n), matching SequenceLogprob::normalized exactly.
double normalized_sum(std::span<const double> values);

}  // namespace amirgrpo::grpo
