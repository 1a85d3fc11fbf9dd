#include "amirgrpo/amir.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace amirgrpo::amir {

std::vector<PreferencePair> mine_pairs(std::span<const double> rewards, double delta_r,
                                       std::optional<std::size_t> cap) {
  if (!(delta_r > 0.0)) throw std::invalid_argument("mine_pairs: delta_r must be positive");
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    for (std::size_t j = 0; j < rewards.size(); ++j) {
      const double gap = rewards[i] - rewards[j];
      if (gap > delta_r) pairs.push_back({0, i, j, gap, std::nullopt});
    }
  }
  if (cap && pairs.size() > *cap) {
    std::stable_sort(pairs.begin(), pairs.end(), [](const PreferencePair& a, const PreferencePair& b) {
      if (a.reward_gap != b.reward_gap) return a.reward_gap > b.reward_gap;
      if (a.preferred != b.preferred) return a.preferred < b.preferred;
      return a.rejected < b.rejected;
    });
    pairs.resize(*cap);
  }
  return pairs;
}

namespace {
const Tensor& pick(const policy::SequenceLogprob& lp, LogprobNorm norm) {
  return norm == LogprobNorm::length ? lp.normalized : lp.total;
}

double ref_value(const std::vector<double>& per_token, LogprobNorm norm) {
  if (norm == LogprobNorm::length) return grpo::normalized_sum(per_token);
  double s = 0.0;
  for (double v : per_token) s += v;
  return s;
}
}  // namespace

Tensor dpo_logit(Tape& tape, const policy::SequenceLogprob& theta_preferred,
                 const policy::SequenceLogprob& theta_rejected, double ref_preferred, double ref_rejected,
                 double beta, LogprobNorm norm) {
  if (!(beta > 0.0)) throw std::invalid_argument("dpo_logit: beta must be positive");
  Tensor pref = tape.add_scalar(pick(theta_preferred, norm), -ref_preferred);
  Tensor rej = tape.add_scalar(pick(theta_rejected, norm), -ref_rejected);
  return tape.scale(tape.sub(pref, rej), beta);
}

double dpo_logit(const PreferencePair& pair, const grpo::RolloutGroup& group, const policy::PolicyParams& theta,
                 const policy::PolicyParams& reference, double beta, LogprobNorm norm) {
  if (pair.preferred >= group.size() || pair.rejected >= group.size()) {
    throw std::out_of_range("dpo_logit: pair index outside group");
  }
  Tape tape = Tape::inference();
  const auto& ri = group.rollouts[pair.preferred];
  const auto& rj = group.rollouts[pair.rejected];
  auto ti = policy::sequence_logprob(tape, theta, ri.query, ri.completion);
  auto tj = policy::sequence_logprob(tape, theta, rj.query, rj.completion);
  const double refi = ref_value(policy::sequence_logprob(reference, ri.query, ri.completion).per_token, norm);
  const double refj = ref_value(policy::sequence_logprob(reference, rj.query, rj.completion).per_token, norm);
  return dpo_logit(tape, ti, tj, refi, refj, beta, norm).item();
}

Tensor pref_loss(Tape& tape, std::span<const Tensor> logits) {
  if (logits.empty()) return Tensor::scalar(0.0);
  return tape.scale(tape.mean(tape.log_sigmoid(tape.stack(logits))), -1.0);
}

PreferenceTerm preference_loss(Tape& tape, std::span<GroupPairs> groups, double beta, LogprobNorm norm) {
  std::vector<Tensor> logits;
  for (auto& gp : groups) {
    if (gp.pairs.empty()) continue;
    const auto& group = *gp.group;
    if (group.ref_logp.size() != group.size() || gp.theta.size() != group.size()) {
      throw std::invalid_argument("preference_loss: group lacks reference or policy log-probs");
    }
    std::vector<double> ref(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) ref[i] = ref_value(group.ref_logp[i], norm);
    for (auto& pair : gp.pairs) {
      Tensor z = dpo_logit(tape, gp.theta[pair.preferred], gp.theta[pair.rejected], ref[pair.preferred],
                           ref[pair.rejected], beta, norm);
      pair.z = z.item();
      logits.push_back(std::move(z));
    }
  }
  return {pref_loss(tape, logits), logits.size()};
}

Tensor combined_loss(Tape& tape, const Tensor& grpo_term, const Tensor& pref_term, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("combined_loss: lambda must be non-negative");
  return tape.add(grpo_term, tape.scale(pref_term, lambda));
}

// ---------------------------------------------------------------- controller

void validate(const LambdaConfig& c) {
  if (!(c.step > 1.0)) throw std::invalid_argument("lambda step must be > 1");
  if (!(c.band_lo > 0.0 && c.band_lo <= c.band_hi)) throw std::invalid_argument("lambda band must satisfy 0 < lo <= hi");
  if (!(c.min >= 0.0 && c.min <= c.max)) throw std::invalid_argument("lambda bounds must satisfy 0 <= min <= max");
  if (!(c.initial >= c.min && c.initial <= c.max)) throw std::invalid_argument("initial lambda outside [min, max]");
  if (!(c.smoothing >= 0.0 && c.smoothing < 1.0)) throw std::invalid_argument("lambda smoothing must be in [0, 1)");
  if (!(c.denominator_eps > 0.0)) throw std::invalid_argument("lambda denominator eps must be positive");
}

LambdaController::LambdaController(LambdaConfig config) : config_(config), lambda_(config.initial) {
  validate(config_);
}

double LambdaController::contribution_ratio(double grpo_mag, double pref_mag) const {
  return lambda_ * pref_mag / (std::abs(grpo_mag) + config_.denominator_eps);
}

double LambdaController::update(double grpo_mag, double pref_mag) {
  if (grpo_mag < 0.0 || pref_mag < 0.0) throw std::invalid_argument("lambda_update: magnitudes must be >= 0");
  if (!seeded_) {
    grpo_ema_ = grpo_mag;
    pref_ema_ = pref_mag;
    seeded_ = true;
  } else {
    const double a = config_.smoothing;
    grpo_ema_ = a * grpo_ema_ + (1.0 - a) * grpo_mag;
    pref_ema_ = a * pref_ema_ + (1.0 - a) * pref_mag;
  }
  raw_ratio_ = contribution_ratio(grpo_mag, pref_mag);
  ratio_ = contribution_ratio(grpo_ema_, pref_ema_);
  history_.push_back(ratio_);
  if (history_.size() > kLambdaHistory) history_.pop_front();

  ++updates_;
  if (updates_ <= config_.warmup) return lambda_;
  if (ratio_ < config_.band_lo) {
    lambda_ = std::min(lambda_ * config_.step, config_.max);
  } else if (ratio_ > config_.band_hi) {
    lambda_ = std::max(lambda_ / config_.step, config_.min);
  }
  return lambda_;
}

}  // namespace amirgrpo::amir
