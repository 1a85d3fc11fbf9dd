#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "amirgrpo/vocab.hpp"

namespace amirgrpo::tasks {

enum class Family { addition_chain, modular_arithmetic, digit_parity, bracket_evaluation };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);  // throws std::invalid_argument

struct TaskInstance {
  std::string text;              // e.g. "3+4+5"
  policy::TokenIds query;        // encode(text + "=")
  std::string answer;            // ground truth, e.g. "12"
  Family family = Family::addition_chain;
  int difficulty = 0;
  std::uint64_t seed = 0;        // seed the instance was generated from
};

// Difficulty semantics per family:
//   addition-chain      difficulty = operand count (>= 2), operands 0..9
//   modular-arithmetic  operands below 10^difficulty, modulus 2..9
//   digit-parity        difficulty = digit count; answer is the parity of the digit sum
//   bracket-evaluation  difficulty = bracketed groups joined by + or -
// Queries are unique within one call. Same (family, count, difficulty, seed)
// always yields the same list.
std::vector<TaskInstance> generate_instances(Family family, std::size_t count, int difficulty,
                                             std::uint64_t seed, const policy::Vocabulary& vocab);

// Disjoint train/eval pools drawn across [min_difficulty, max_difficulty].
struct TaskSplit {
  std::vector<TaskInstance> train;
  std::vector<TaskInstance> eval;
};
TaskSplit generate_split(Family family, int min_difficulty, int max_difficulty, std::size_t train_count,
                         std::size_t eval_count, std::uint64_t seed, const policy::Vocabulary& vocab);

// Builds query tokens for a task text.
policy::TokenIds encode_query(const policy::Vocabulary& vocab, std::string_view text);

}  // namespace amirgrpo::tasks
