#pragma once

#include <filesystem>
#include <stdexcept>

#include "amirgrpo/policy.hpp"
#include "amirgrpo/vocab.hpp"

namespace amirgrpo::policy {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Vocabulary vocab;
  PolicyParams params;
};

// Versioned JSON container. Doubles are written with round-trip precision,
// so load(save(p)) reproduces every value bit for bit.
inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab,
                     const PolicyParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace amirgrpo::policy
