#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "amirgrpo/amir.hpp"
#include "amirgrpo/reward.hpp"
#include "amirgrpo/tasks.hpp"
#include "amirgrpo/trainer.hpp"

namespace amirgrpo::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::filesystem::path& path);
// Writes through a temporary file so a failed run never leaves a partial artifact.
void write_text(const std::filesystem::path& path, std::string_view text);

// {query, answer, family, difficulty, seed}. Malformed lines throw IoError.
std::string task_line(const tasks::TaskInstance& task);
tasks::TaskInstance parse_task(std::string_view line, const policy::Vocabulary& vocab);
std::vector<tasks::TaskInstance> read_tasks(const std::filesystem::path& path, const policy::Vocabulary& vocab);

// {query_id, sample_id, tokens, logp_old, reward:{corr,fmt,calib,total}, answer, confidence, correct}
struct RolloutRecord {
  std::size_t query_id = 0;
  std::size_t sample_id = 0;
  policy::TokenIds tokens;  // completion token ids
  std::vector<double> logp_old;
  tasks::RewardBreakdown reward;
  std::optional<std::string> answer;
  std::optional<double> confidence;
  bool correct = false;
};

RolloutRecord to_record(const trainer::EvalSample& sample);
std::string rollout_line(const RolloutRecord& record);
RolloutRecord parse_rollout(std::string_view line);
std::vector<RolloutRecord> read_rollouts(const std::filesystem::path& path);

// {query_id, i, j, r_i, r_j, gap, z}; z is null until evaluated.
std::string pair_line(std::size_t query_id, const amir::PreferencePair& pair, double r_i, double r_j);

}  // namespace amirgrpo::io
