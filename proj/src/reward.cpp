#include "amirgrpo/reward.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <stdexcept>

namespace amirgrpo::tasks {

std::string canonical_answer(std::string_view answer) {
  std::string_view s = answer;
  bool negative = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    negative = s[0] == '-';
    s.remove_prefix(1);
  }
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    return std::string(answer);
  }
  const auto first = s.find_first_not_of('0');
  if (first == std::string_view::npos) return "0";
  return (negative ? "-" : "") + std::string(s.substr(first));
}

int correctness_reward(const policy::Rollout& rollout, std::string_view truth) {
  if (!rollout.answer) return 0;
  return canonical_answer(*rollout.answer) == canonical_answer(truth) ? 1 : 0;
}

double format_reward(const policy::Rollout& rollout, const policy::Vocabulary& vocab) {
  const std::array<int, 4> markers = {vocab.answer_open(), vocab.answer_close(), vocab.conf_open(),
                                      vocab.conf_close()};
  std::size_t matched = 0;
  for (int tok : rollout.completion) {
    if (matched < markers.size() && tok == markers[matched]) ++matched;
  }
  return static_cast<double>(matched) / static_cast<double>(markers.size());
}

double calibration_reward(double confidence, int correct) {
  const double q = std::clamp(confidence, 0.0, 1.0);
  const double a = correct ? 1.0 : 0.0;
  return 1.0 - (a - q) * (a - q);
}

double calibration_reward(const policy::Rollout& rollout, int correct) {
  if (!rollout.confidence) return 0.0;
  return calibration_reward(*rollout.confidence, correct);
}

double total_reward(const RewardBreakdown& parts, const RewardWeights& weights) {
  if (weights.correctness < 0 || weights.format < 0 || weights.calibration < 0) {
    throw std::invalid_argument("reward weights must be non-negative");
  }
  return weights.correctness * parts.correctness + weights.format * parts.format +
         weights.calibration * parts.calibration;
}

RewardBreakdown score(const policy::Rollout& rollout, std::string_view truth,
                      const policy::Vocabulary& vocab, const RewardWeights& weights) {
  RewardBreakdown r;
  r.correctness = correctness_reward(rollout, truth);
  r.format = format_reward(rollout, vocab);
  r.calibration = calibration_reward(rollout, r.correctness);
  r.total = total_reward(r, weights);
  return r;
}

}  // namespace amirgrpo::tasks
