#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "amirgrpo/config.hpp"
#include "amirgrpo/policy.hpp"
#include "amirgrpo/reward.hpp"
#include "amirgrpo/tasks.hpp"

namespace amirgrpo::trainer {

struct MetricRecord {
  std::size_t step = 0;  // 1-based count of completed updates
  double mean_reward = 0.0;
  double accuracy = 0.0;  // fraction of correct rollouts in the batch
  double adv_mean = 0.0;
  double adv_std = 0.0;
  double grpo_loss = 0.0;
  double pref_loss = 0.0;
  double lambda = 0.0;  // weight applied in this step
  std::optional<double> ratio;  // smoothed contribution ratio after this step
  std::optional<double> raw_ratio;
  double mean_kl = 0.0;
  std::size_t pairs = 0;
  std::size_t degenerate_groups = 0;
  std::optional<double> len_correct;
  std::optional<double> len_incorrect;
  std::optional<double> pass1;  // held-out Pass@1 when an evaluation ran
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  std::size_t kl_clamped = 0;
  std::size_t conf_clamped = 0;
};

inline constexpr int kMetricsVersion = 1;
std::string metrics_header();  // includes the version comment line
std::string metrics_row(const MetricRecord& record);

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::string dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

struct EvalSample {
  std::size_t query_id = 0;
  std::size_t sample_id = 0;
  policy::Rollout rollout;
  tasks::RewardBreakdown reward;
};

struct EvalResult {
  std::size_t n = 0;
  std::vector<std::size_t> correct;  // c_q per task
  std::vector<EvalSample> samples;   // query-major, sample-minor

  double pass_at_1() const;
};

/// Samples n completions per task and counts correct ones. Each sample draws
/// from its own stream keyed by (seed, task index, sample index).
EvalResult evaluate(const policy::PolicyParams& params, const policy::Vocabulary& vocab,
                    const std::vector<tasks::TaskInstance>& tasks, std::size_t n,
                    const policy::SamplingConfig& sampling, const tasks::RewardWeights& weights,
                    std::uint64_t seed, std::size_t threads = 1);

struct TrainOptions {
  std::size_t threads = 1;
  std::function<void(const MetricRecord&)> on_metric;
  std::function<void(std::size_t step, const policy::PolicyParams&)> on_checkpoint;
};

struct TrainResult {
  policy::PolicyParams initial;
  policy::PolicyParams params;
  std::vector<MetricRecord> records;
  std::optional<double> initial_pass1;
  std::optional<double> final_pass1;
};

// Random initialization drawn from the configured seed.
policy::PolicyParams initial_policy(const TrainConfig& config, const policy::Vocabulary& vocab);

/// Supervised warm start: teacher-forces well-formed completions with random
/// confidences. A target answer is the task's own with probability
/// warmstart_correct and otherwise a randomly chosen task's answer, so the
/// result knows the completion protocol and only part of the task.
void warm_start(policy::PolicyParams& params, const TrainConfig& config, const policy::Vocabulary& vocab,
                const std::vector<tasks::TaskInstance>& pool);

// initial_policy followed by warm_start; the policy RL starts from.
policy::PolicyParams base_policy(const TrainConfig& config, const policy::Vocabulary& vocab,
                                 const std::vector<tasks::TaskInstance>& pool);

// Training and held-out pools for a config.
tasks::TaskSplit make_tasks(const TrainConfig& config, const policy::Vocabulary& vocab);

/// Rollout, reward, mining, loss, update loop. Throws TrainingAborted on a
/// non-finite loss or a changed reference snapshot.
TrainResult train(const TrainConfig& config, const policy::Vocabulary& vocab, const tasks::TaskSplit& tasks,
                  const TrainOptions& options = {});

// Seed for the held-out evaluation that runs after `step` updates.
std::uint64_t eval_seed(std::uint64_t seed, std::size_t step);

}  // namespace amirgrpo::trainer
