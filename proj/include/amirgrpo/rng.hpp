#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace amirgrpo {

// Sub-seeds are derived from the single configured seed by hashing it with a
// domain tag and a list of counters (step, query index, sample index, ...).
// Every random stream in the program comes from this function.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> counters);

// Stream domains for derive_seed.
enum class Stream : std::uint64_t {
  init = 1,
  tasks = 2,
  batch = 3,
  rollout = 4,
  eval = 5,
  warmstart = 6,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  // Uniform integer in [lo, hi].
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  double normal(double mean, double stddev);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline Rng stream_rng(std::uint64_t seed, Stream domain,
                      std::initializer_list<std::uint64_t> counters = {}) {
  std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(domain)});
  return Rng(derive_seed(s, counters));
}

}  // namespace amirgrpo
