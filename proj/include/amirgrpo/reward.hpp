#pragma once

#include <string_view>

#include "amirgrpo/policy.hpp"
#include "amirgrpo/vocab.hpp"

namespace amirgrpo::tasks {

struct RewardWeights {
  double correctness = 2.0;
  double format = 0.9;
  double calibration = 1.0;

  double max_total() const { return correctness + format + calibration; }
};

struct RewardBreakdown {
  int correctness = 0;       // {0, 1}
  double format = 0.0;       // [0, 1]
  double calibration = 0.0;  // [0, 1]
  double total = 0.0;
};

// Canonical form used for answer comparison: integers lose leading zeros and
// a redundant sign; anything else is compared verbatim.
std::string canonical_answer(std::string_view answer);

int correctness_reward(const policy::Rollout& rollout, std::string_view truth);

// Fraction of the marker sequence <a> </a> <c> </c> matched, in order, as a
// subsequence of the completion (longest matched prefix / 4).
double format_reward(const policy::Rollout& rollout, const policy::Vocabulary& vocab);

// Brier complement 1 - (a - q)^2; zero when no confidence was parsed.
double calibration_reward(const policy::Rollout& rollout, int correct);
double calibration_reward(double confidence, int correct);

double total_reward(const RewardBreakdown& parts, const RewardWeights& weights);

RewardBreakdown score(const policy::Rollout& rollout, std::string_view truth,
                      const policy::Vocabulary& vocab, const RewardWeights& weights);

}  // namespace amirgrpo::tasks
