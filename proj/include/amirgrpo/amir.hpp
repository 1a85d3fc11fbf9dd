#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "amirgrpo/grpo.hpp"

namespace amirgrpo::amir {

using diffmath::Tape;
using diffmath::Tensor;

struct PreferencePair {
  std::size_t group = 0;
  std::size_t preferred = 0;  // i, 0-based within the group
  std::size_t rejected = 0;   // j
  double reward_gap = 0.0;    // r_i - r_j, strictly greater than delta_r
  std::optional<double> z;    // filled once the logit is evaluated
};

/// Every ordered pair (i, j) with r_i - r_j > delta_r. With a cap, keeps the
/// `cap` largest gaps; ties go to lower i, then lower j. Output is ordered by
/// (i, j) without a cap and by the ranking above with one.
std::vector<PreferencePair> mine_pairs(std::span<const double> rewards, double delta_r,
                                       std::optional<std::size_t> cap = std::nullopt);

enum class LogprobNorm { length, sum };

/// z = beta * [(l_theta(o_i) - l_ref(o_i)) - (l_theta(o_j) - l_ref(o_j))].
/// `theta_*` are differentiable sequence log-probs; `ref_*` are constants
/// measured with the same normalization.
Tensor dpo_logit(Tape& tape, const policy::SequenceLogprob& theta_preferred,
                 const policy::SequenceLogprob& theta_rejected, double ref_preferred, double ref_rejected,
                 double beta, LogprobNorm norm = LogprobNorm::length);

// Value-only logit for a pair inside a group, evaluated from snapshots.
double dpo_logit(const PreferencePair& pair, const grpo::RolloutGroup& group, const policy::PolicyParams& theta,
                 const policy::PolicyParams& reference, double beta, LogprobNorm norm = LogprobNorm::length);

/// -(1/N) * sum log sigmoid(z) over all N logits; an exact constant zero when
/// there are none.
Tensor pref_loss(Tape& tape, std::span<const Tensor> logits);

struct GroupPairs {
  const grpo::RolloutGroup* group = nullptr;
  std::span<const policy::SequenceLogprob> theta;
  std::span<PreferencePair> pairs;  // z is written back
};

struct PreferenceTerm {
  Tensor loss;
  std::size_t pairs = 0;
};

// Preference regularizer over a whole batch: logits for every mined pair of
// every group, averaged over all pairs in the batch.
PreferenceTerm preference_loss(Tape& tape, std::span<GroupPairs> groups, double beta,
                               LogprobNorm norm = LogprobNorm::length);

/// grpo_term + lambda * pref_term. Both terms are already negated objectives.
Tensor combined_loss(Tape& tape, const Tensor& grpo_term, const Tensor& pref_term, double lambda);

struct LambdaConfig {
  double initial = 0.1;
  double band_lo = 0.1;
  double band_hi = 0.5;
  double step = 1.1;  // multiplicative factor m
  double min = 1e-3;
  double max = 10.0;
  std::size_t warmup = 20;
  double smoothing = 0.9;  // EMA decay applied to observed magnitudes
  double denominator_eps = 1e-8;
};

void validate(const LambdaConfig& config);

// Keeps lambda * pref_mag / (|grpo_mag| + eps) inside [band_lo, band_hi] by
// multiplying or dividing lambda by `step` at most once per update.
class LambdaController {
 public:
  explicit LambdaController(LambdaConfig config = {});

  double lambda() const { return lambda_; }
  const LambdaConfig& config() const { return config_; }
  std::size_t updates() const { return updates_; }

  // Ratio from the raw magnitudes of the latest update.
  double raw_ratio() const { return raw_ratio_; }
  // Ratio from smoothed magnitudes; this is what drives the adjustment.
  double ratio() const { return ratio_; }
  const std::deque<double>& history() const { return history_; }

  double contribution_ratio(double grpo_mag, double pref_mag) const;

  /// Observes one step's magnitudes and adjusts lambda (no-op adjustment
  /// during warmup). Returns the new lambda.
  double update(double grpo_mag, double pref_mag);

 private:
  LambdaConfig config_;
  double lambda_;
  std::size_t updates_ = 0;
  bool seeded_ = false;
  double grpo_ema_ = 0.0, pref_ema_ = 0.0;
  double raw_ratio_ = 0.0, ratio_ = 0.0;
  std::deque<double> history_;
};

inline constexpr std::size_t kLambdaHistory = 256;

}  // namespace amirgrpo::amir
