#include "amirgrpo/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "amirgrpo/config.hpp"

namespace amirgrpo::evalkit {

std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    // r * (n - k + i) / i stays integral at every step.
    r = r * (n - k + i) / i;
    if (r > UINT64_MAX) throw std::overflow_error("binomial: result exceeds 64 bits");
  }
  return static_cast<std::uint64_t>(r);
}

double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
  if (k == 0) throw std::invalid_argument("pass_at_k: k must be >= 1");
  if (k > n) throw std::invalid_argument("pass_at_k: k exceeds n");
  if (c > n) throw std::invalid_argument("pass_at_k: c exceeds n");
  const std::uint64_t total = binomial(n, k);
  const std::uint64_t miss = binomial(n - c, k);
  return static_cast<double>(total - miss) / static_cast<double>(total);
}

double pass_at_k(std::span<const QuestionCounts> questions, std::size_t k) {
  if (questions.empty()) throw std::invalid_argument("pass_at_k: no questions");
  double s = 0.0;
  for (const auto& q : questions) s += pass_at_k(q.n, q.c, k);
  return s / static_cast<double>(questions.size());
}

std::vector<PassAtKRow> pass_at_k_grid(std::span<const QuestionCounts> questions, std::span<const std::size_t> ks) {
  std::vector<PassAtKRow> rows;
  for (auto k : ks) rows.push_back({k, pass_at_k(questions, k)});
  return rows;
}

std::string pass_at_k_csv(std::span<const PassAtKRow> rows) {
  std::string out = "k,pass_at_k\n";
  for (const auto& r : rows) out += std::to_string(r.k) + ',' + format_double(r.value) + '\n';
  return out;
}

double conditional_perplexity(const policy::PolicyParams& params, std::span<const int> query,
                              std::span<const int> completion) {
  if (completion.empty()) throw std::invalid_argument("conditional_perplexity: empty completion");
  std::vector<int> ids(query.begin(), query.end());
  ids.insert(ids.end(), completion.begin(), completion.end());
  auto tape = diffmath::Tape::inference();
  const auto logits = policy::forward_logits(tape, params, ids);
  const std::size_t V = params.shape().vocab_size, T = completion.size();
  auto row = [&](std::size_t t) { return logits.values().subspan((query.size() + t) * V, V); };

  // Per-token negative log-likelihoods, then the geometric mean of the inverse
  // probabilities taken relative to the most likely token. Its inverse
  // probability is a plain sum of exponentials, so equal tokens give an exact
  // result (a uniform policy yields V itself).
  std::vector<double> nll(T), lsm(V);
  for (std::size_t t = 0; t < T; ++t) {
    diffmath::kernels::log_softmax_row(row(t), lsm);
    nll[t] = -lsm[static_cast<std::size_t>(completion[t])];
  }
  const auto pivot = static_cast<std::size_t>(std::min_element(nll.begin(), nll.end()) - nll.begin());
  const auto r = row(pivot);
  const double x = r[static_cast<std::size_t>(completion[pivot])];
  double inverse = 0.0;
  for (double v : r) inverse += std::exp(v - x);
  double spread = 0.0;
  for (double v : nll) spread += v - nll[pivot];
  spread /= static_cast<double>(T);
  if (std::isfinite(inverse)) return inverse * std::exp(spread);
  return std::exp(nll[pivot] + spread);
}

std::optional<double> preference_margin(const policy::PolicyParams& params,
                                        std::span<const policy::Rollout> correct,
                                        std::span<const policy::Rollout> incorrect) {
  if (correct.empty() || incorrect.empty()) return std::nullopt;
  auto mean_of = [&](std::span<const policy::Rollout> rs) {
    double s = 0.0;
    for (const auto& r : rs) s += policy::length_normalized_logprob(params, r.query, r.completion);
    return s / static_cast<double>(rs.size());
  };
  return mean_of(correct) - mean_of(incorrect);
}

std::string CoverageCell::label() const {
  auto f = [](bool b) { return b ? "yes" : "no"; };
  return std::string(f(base)) + '/' + f(grpo) + '/' + f(amir);
}

std::vector<CoverageCell> coverage_table(std::span<const std::size_t> base, std::span<const std::size_t> grpo,
                                         std::span<const std::size_t> amir) {
  if (base.size() != grpo.size() || base.size() != amir.size()) {
    throw std::invalid_argument("coverage_table: question sets differ in size");
  }
  if (base.empty()) throw std::invalid_argument("coverage_table: no questions");
  std::vector<CoverageCell> cells(8);
  // Bit 2 = base unsolved, bit 1 = grpo unsolved, bit 0 = amir unsolved.
  for (std::size_t m = 0; m < 8; ++m) {
    cells[m].base = !(m & 4);
    cells[m].grpo = !(m & 2);
    cells[m].amir = !(m & 1);
  }
  for (std::size_t q = 0; q < base.size(); ++q) {
    const std::size_t m = (base[q] == 0 ? 4 : 0) | (grpo[q] == 0 ? 2 : 0) | (amir[q] == 0 ? 1 : 0);
    ++cells[m].count;
  }
  for (auto& c : cells) c.fraction = static_cast<double>(c.count) / static_cast<double>(base.size());
  return cells;
}

std::string coverage_csv(std::span<const CoverageCell> cells) {
  std::string out = "base,grpo,amir,count,fraction\n";
  for (const auto& c : cells) {
    out += std::string(c.base ? "1" : "0") + ',' + (c.grpo ? "1" : "0") + ',' + (c.amir ? "1" : "0") + ',' +
           std::to_string(c.count) + ',' + format_double(c.fraction) + '\n';
  }
  return out;
}

namespace {
constexpr std::array<std::string_view, kFailureLabels> kLabelNames = {
    "calculation", "conceptual", "reasoning", "modeling", "constraint", "prompt-misinterpretation", "format", "other",
};
}

std::string_view failure_label_name(FailureLabel label) { return kLabelNames[static_cast<std::size_t>(label)]; }

FailureLabel parse_failure_label(std::string_view name) {
  for (std::size_t i = 0; i < kLabelNames.size(); ++i)
    if (kLabelNames[i] == name) return static_cast<FailureLabel>(i);
  throw std::invalid_argument("unknown failure label '" + std::string(name) + "'");
}

double FailurePoint::relative_position() const {
  return static_cast<double>(step) / static_cast<double>(steps);
}

FailurePoint make_failure_point(std::size_t step, std::size_t steps, std::optional<FailureLabel> label) {
  if (steps == 0 || step == 0 || step > steps) {
    throw std::invalid_argument("failure point needs 1 <= step <= steps");
  }
  return {step, steps, label};
}

double DensityGrid::integral() const {
  double s = 0.0;
  for (std::size_t i = 1; i < kDensityGrid; ++i) s += 0.5 * (density[i] + density[i - 1]) * (x[i] - x[i - 1]);
  return s;
}

DensityGrid locality_density(std::span<const double> positions, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("locality_density: bandwidth must be positive");
  if (positions.empty()) throw std::invalid_argument("locality_density: no failure points");
  for (double p : positions)
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("locality_density: position outside [0, 1]");
  DensityGrid grid;
  const double norm = 1.0 / (static_cast<double>(positions.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  auto kernel = [&](double u) { return std::exp(-0.5 * u * u); };
  for (std::size_t g = 0; g < kDensityGrid; ++g) {
    const double x = static_cast<double>(g) / static_cast<double>(kDensityGrid - 1);
    double s = 0.0;
    for (double p : positions) {
      s += kernel((x - p) / bandwidth) + kernel((x + p) / bandwidth) + kernel((x - (2.0 - p)) / bandwidth);
    }
    grid.x[g] = x;
    grid.density[g] = s * norm;
  }
  return grid;
}

DensityGrid locality_density(std::span<const FailurePoint> points, double bandwidth) {
  std::vector<double> positions;
  positions.reserve(points.size());
  for (const auto& p : points) positions.push_back(p.relative_position());
  return locality_density(positions, bandwidth);
}

std::string density_csv(const DensityGrid& grid) {
  std::string out = "x,density\n";
  for (std::size_t g = 0; g < kDensityGrid; ++g) out += format_double(grid.x[g]) + ',' + format_double(grid.density[g]) + '\n';
  return out;
}

LengthStats length_stats(std::span<const std::size_t> lengths) {
  LengthStats st;
  st.count = lengths.size();
  if (lengths.empty()) return st;
  std::vector<std::size_t> v(lengths.begin(), lengths.end());
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (auto l : v) s += static_cast<double>(l);
  st.mean = s / static_cast<double>(v.size());
  const std::size_t mid = v.size() / 2;
  st.median = v.size() % 2 ? static_cast<double>(v[mid]) : 0.5 * static_cast<double>(v[mid - 1] + v[mid]);
  st.max = v.back();
  return st;
}

}  // namespace amirgrpo::evalkit
