#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amirgrpo/diffmath.hpp"
#include "amirgrpo/rng.hpp"
#include "amirgrpo/vocab.hpp"

namespace amirgrpo::policy {

using diffmath::Tape;
using diffmath::Tensor;

struct ModelShape {
  std::size_t vocab_size = 0;
  std::size_t embed = 64;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t max_positions = 128;

  bool operator==(const ModelShape&) const = default;
};

// Causal mixing model:
//   x_t   = E[tok_t] + P[t]
//   per layer:  h_t = tanh(x_t Win + mean(x_0..x_t) Wctx + b);  x_t += h_t Wout
//   logits_t = x_t Wvocab + bvocab
class PolicyParams {
 public:
  PolicyParams() = default;

  static PolicyParams initialize(const ModelShape& shape, Rng& rng);
  static PolicyParams zeros(const ModelShape& shape);

  const ModelShape& shape() const { return shape_; }
  std::size_t parameter_count() const;

  std::span<Tensor> tensors() { return tensors_; }
  std::span<const Tensor> tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  Tensor& tensor(std::string_view name);
  const Tensor& tensor(std::string_view name) const;

  const Tensor& token_embedding() const { return tensors_[0]; }
  const Tensor& position_embedding() const { return tensors_[1]; }
  const Tensor& w_in(std::size_t layer) const { return tensors_[2 + 4 * layer]; }
  const Tensor& w_ctx(std::size_t layer) const { return tensors_[3 + 4 * layer]; }
  const Tensor& bias(std::size_t layer) const { return tensors_[4 + 4 * layer]; }
  const Tensor& w_out(std::size_t layer) const { return tensors_[5 + 4 * layer]; }
  const Tensor& w_vocab() const { return tensors_[2 + 4 * shape_.layers]; }
  const Tensor& b_vocab() const { return tensors_[3 + 4 * shape_.layers]; }

  /// Deep copy with fresh leaves; later updates to either side never reach
  /// the other.
  PolicyParams snapshot() const;

  // FNV-1a over the raw bytes of every parameter value.
  std::uint64_t fingerprint() const;

  bool all_finite() const;

 private:
  static PolicyParams allocate(const ModelShape& shape);
  ModelShape shape_;
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

inline PolicyParams snapshot(const PolicyParams& params) { return params.snapshot(); }

struct Rollout {
  TokenIds query;
  TokenIds completion;
  std::vector<double> logp_old;  // log-probs of the distribution actually sampled
  bool terminated = false;       // EOS reached before the length cap
  std::optional<std::string> answer;
  std::optional<double> confidence;
  bool confidence_clamped = false;
};

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t max_len = 64;
};

// Incremental decoder over frozen parameters. Produces the same logits as the
// tape forward pass, bit for bit.
class Decoder {
 public:
  explicit Decoder(const PolicyParams& params);
  // Feeds one token and returns the logits for the next position.
  std::span<const double> feed(int token);
  std::size_t position() const { return pos_; }

 private:
  const PolicyParams& params_;
  std::size_t pos_ = 0;
  std::vector<std::vector<double>> running_;  // per-layer prefix sums
  std::vector<double> x_, ctx_, a_, b_, h_, out_, logits_;
};

Rollout sample_completion(const PolicyParams& params, const Vocabulary& vocab,
                          std::span<const int> query, const SamplingConfig& config, Rng& rng);

// Logits for [BOS] + ids, shape [1 + ids.size(), vocab].
Tensor forward_logits(Tape& tape, const PolicyParams& params, std::span<const int> ids);

struct SequenceLogprob {
  Tensor per_token;  // [|completion|]
  Tensor total;      // [1]
  Tensor normalized; // total / |completion|
};

SequenceLogprob sequence_logprob(Tape& tape, const PolicyParams& params,
                                 std::span<const int> query, std::span<const int> completion);

struct LogprobValues {
  double total = 0.0;
  std::vector<double> per_token;
};

LogprobValues sequence_logprob(const PolicyParams& params, std::span<const int> query,
                               std::span<const int> completion);
double length_normalized_logprob(const PolicyParams& params, std::span<const int> query,
                                 std::span<const int> completion);

}  // namespace amirgrpo::policy
