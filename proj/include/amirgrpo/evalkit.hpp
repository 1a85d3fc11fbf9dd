#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "amirgrpo/policy.hpp"

namespace amirgrpo::evalkit {

struct QuestionCounts {
  std::size_t n = 0;  // generations produced
  std::size_t c = 0;  // correct among them
};

// Exact binomial coefficient; throws std::overflow_error beyond 64 bits.
std::uint64_t binomial(std::size_t n, std::size_t k);

/// 1 - C(n-c, k) / C(n, k) for one question, from exact integers.
double pass_at_k(std::size_t n, std::size_t c, std::size_t k);

/// Average of the per-question estimator. Throws std::invalid_argument when
/// k is 0, k > n, or c > n for any question.
double pass_at_k(std::span<const QuestionCounts> questions, std::size_t k);

struct PassAtKRow {
  std::size_t k = 0;
  double value = 0.0;
};
std::vector<PassAtKRow> pass_at_k_grid(std::span<const QuestionCounts> questions, std::span<const std::size_t> ks);
std::string pass_at_k_csv(std::span<const PassAtKRow> rows);

/// exp(-mean token log-prob of the completion given the query); >= 1.
double conditional_perplexity(const policy::PolicyParams& params, std::span<const int> query,
                              std::span<const int> completion);

/// Mean length-normalized log-prob over correct completions minus the same
/// over incorrect ones. Absent when either list is empty.
std::optional<double> preference_margin(const policy::PolicyParams& params,
                                        std::span<const policy::Rollout> correct,
                                        std::span<const policy::Rollout> incorrect);

struct CoverageCell {
  bool base = false;
  bool grpo = false;
  bool amir = false;
  std::size_t count = 0;
  double fraction = 0.0;

  std::string label() const;  // e.g. "yes/yes/no"
};

/// Partitions questions by which of the three models solved them (c >= 1).
/// Cells come in the fixed order yes/yes/yes, yes/yes/no, ..., no/no/no.
std::vector<CoverageCell> coverage_table(std::span<const std::size_t> base, std::span<const std::size_t> grpo,
                                         std::span<const std::size_t> amir);
std::string coverage_csv(std::span<const CoverageCell> cells);

enum class FailureLabel {
  calculation,
  conceptual,
  reasoning,
  modeling,
  constraint,
  prompt_misinterpretation,
  format,
  other,
};
inline constexpr std::size_t kFailureLabels = 8;
std::string_view failure_label_name(FailureLabel label);
FailureLabel parse_failure_label(std::string_view name);

struct FailurePoint {
  std::size_t step = 1;   // 1-based index of the first erroneous step
  std::size_t steps = 1;  // total steps in the solution
  std::optional<FailureLabel> label;

  double relative_position() const;  // step / steps, in (0, 1]
};

FailurePoint make_failure_point(std::size_t step, std::size_t steps,
                                std::optional<FailureLabel> label = std::nullopt);

inline constexpr std::size_t kDensityGrid = 101;
inline constexpr double kDefaultBandwidth = 0.07;

struct DensityGrid {
  std::array<double, kDensityGrid> x{};
  std::array<double, kDensityGrid> density{};

  double integral() const;  // trapezoid rule over the grid
};

/// Gaussian kernel density of relative failure positions on 101 points over
/// [0, 1], with each kernel reflected at both boundaries.
DensityGrid locality_density(std::span<const FailurePoint> points, double bandwidth = kDefaultBandwidth);
DensityGrid locality_density(std::span<const double> positions, double bandwidth = kDefaultBandwidth);
std::string density_csv(const DensityGrid& grid);

struct LengthStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  std::size_t max = 0;
};
LengthStats length_stats(std::span<const std::size_t> lengths);

}  // namespace amirgrpo::evalkit
