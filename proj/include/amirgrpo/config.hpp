#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amirgrpo/amir.hpp"
#include "amirgrpo/grpo.hpp"
#include "amirgrpo/optim.hpp"
#include "amirgrpo/policy.hpp"
#include "amirgrpo/reward.hpp"
#include "amirgrpo/tasks.hpp"

namespace amirgrpo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Algorithm { grpo, amir_grpo, gspo, amir_gspo };
enum class RatioMode { loss, grad_norm };

std::string_view algorithm_name(Algorithm a);
bool uses_preference(Algorithm a);
bool sequence_level(Algorithm a);

struct TrainConfig {
  Algorithm algorithm = Algorithm::amir_grpo;
  std::size_t group_size = 8;
  std::size_t batch_queries = 4;
  double epsilon = 0.2;
  double gamma = 0.01;
  double beta_dpo = 0.5;
  std::optional<double> delta_r;  // unset: 10% of the maximum total reward

  double lambda_init = 0.1;
  double lambda_lo = 0.1;
  double lambda_hi = 0.5;
  double lambda_step = 1.1;
  double lambda_min = 1e-3;
  double lambda_max = 10.0;
  std::size_t lambda_warmup = 20;
  double lambda_smoothing = 0.9;
  RatioMode ratio_mode = RatioMode::grad_norm;
  amir::LogprobNorm logprob_norm = amir::LogprobNorm::length;
  std::optional<std::size_t> pair_cap;

  double lr = 3e-4;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t max_len = 16;

  std::size_t total_steps = 2000;
  std::uint64_t seed = 1;
  std::size_t ref_refresh_interval = 0;
  std::size_t inner_epochs = 1;
  double std_guard = 1e-4;
  grpo::StdMode std_mode = grpo::StdMode::population;
  bool separate_reference = false;

  tasks::Family family = tasks::Family::addition_chain;
  int difficulty_min = 2;
  int difficulty_max = 3;
  std::size_t train_tasks = 400;
  std::size_t eval_tasks = 100;
  std::size_t eval_interval = 100;
  std::size_t eval_n = 8;
  double eval_temperature = 0.6;
  double eval_top_p = 1.0;
  std::size_t checkpoint_interval = 0;

  // Supervised warm start before RL (0 steps = off). Each target answer is the
  // true one with probability warmstart_correct, else another task's answer.
  std::size_t warmstart_steps = 1000;
  std::size_t warmstart_batch = 32;
  double warmstart_lr = 3e-3;
  double warmstart_correct = 0.6;

  std::size_t embed = 32;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t max_positions = 64;

  double w_corr = 2.0;
  double w_fmt = 0.9;
  double w_calib = 1.0;

  tasks::RewardWeights reward_weights() const { return {w_corr, w_fmt, w_calib}; }
  double margin() const { return delta_r.value_or(0.1 * reward_weights().max_total()); }
  amir::LambdaConfig lambda_config() const;
  diffmath::AdamWConfig adamw_config() const;
  policy::SamplingConfig sampling() const { return {temperature, top_p, max_len}; }
  policy::SamplingConfig eval_sampling() const { return {eval_temperature, eval_top_p, max_len}; }
  policy::ModelShape model_shape(std::size_t vocab_size) const;
};

struct ConfigField {
  std::string name;
  std::string help;
};

// Every settable field in declaration order.
const std::vector<ConfigField>& config_fields();

// Throws ConfigError for unknown keys, malformed values, or values that break
// an invariant of the field itself.
void set_field(TrainConfig& config, std::string_view key, std::string_view value);
std::string get_field(const TrainConfig& config, std::string_view key);

// Applies "key=value" overrides in order.
void apply_overrides(TrainConfig& config, const std::vector<std::string>& overrides);

// Plain text, one `key = value` per line; '#' starts a comment.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
std::string render_config(const TrainConfig& config);

// Cross-field invariants (G >= 2, 0 < epsilon < 1, positive rates, ...).
void validate(const TrainConfig& config);

// Field listing with defaults for --help.
std::string config_help();

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace amirgrpo
