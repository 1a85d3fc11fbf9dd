#include "amirgrpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace amirgrpo::policy {

using diffmath::kernels::log_softmax_row;
using diffmath::kernels::row_matmul;

PolicyParams PolicyParams::allocate(const ModelShape& shape) {
  if (shape.vocab_size == 0 || shape.embed == 0 || shape.hidden == 0 || shape.layers == 0 ||
      shape.max_positions == 0) {
    throw std::invalid_argument("model shape dimensions must be positive");
  }
  PolicyParams p;
  p.shape_ = shape;
  const auto V = shape.vocab_size, D = shape.embed, H = shape.hidden;
  auto add = [&](std::string name, diffmath::Shape s) {
    p.names_.push_back(std::move(name));
    const auto n = diffmath::shape_size(s);
    p.tensors_.push_back(Tensor::parameter(std::move(s), std::vector<double>(n, 0.0)));
  };
  add("token_embedding", {V, D});
  add("position_embedding", {shape.max_positions, D});
  for (std::size_t l = 0; l < shape.layers; ++l) {
    const auto pre = "layer" + std::to_string(l) + ".";
    add(pre + "w_in", {D, H});
    add(pre + "w_ctx", {D, H});
    add(pre + "bias", {H});
    add(pre + "w_out", {H, D});
  }
  add("w_vocab", {D, V});
  add("b_vocab", {V});
  return p;
}

PolicyParams PolicyParams::zeros(const ModelShape& shape) { return allocate(shape); }

PolicyParams PolicyParams::initialize(const ModelShape& shape, Rng& rng) {
  PolicyParams p = allocate(shape);
  const double d = static_cast<double>(shape.embed), h = static_cast<double>(shape.hidden);
  auto fill = [&](std::size_t index, double stddev) {
    for (double& v : p.tensors_[index].mutable_values()) v = rng.normal(0.0, stddev);
  };
  fill(0, 0.5);
  fill(1, 0.5);
  for (std::size_t l = 0; l < shape.layers; ++l) {
    fill(2 + 4 * l, 1.0 / std::sqrt(d));
    fill(3 + 4 * l, 1.0 / std::sqrt(d));
    fill(5 + 4 * l, 0.5 / std::sqrt(h));
  }
  // Small output projection: the initial policy is close to uniform.
  fill(2 + 4 * shape.layers, 0.02);
  return p;
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

Tensor& PolicyParams::tensor(std::string_view name) {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return tensors_[i];
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const Tensor& PolicyParams::tensor(std::string_view name) const {
  return const_cast<PolicyParams*>(this)->tensor(name);
}

PolicyParams PolicyParams::snapshot() const {
  PolicyParams p;
  p.shape_ = shape_;
  p.names_ = names_;
  for (const auto& t : tensors_) {
    p.tensors_.push_back(
        Tensor::parameter(t.shape(), std::vector<double>(t.values().begin(), t.values().end())));
  }
  return p;
}

std::uint64_t PolicyParams::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors_) {
    for (double v : t.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

bool PolicyParams::all_finite() const {
  for (const auto& t : tensors_)
    for (double v : t.values())
      if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------- decoder

Decoder::Decoder(const PolicyParams& params) : params_(params) {
  const auto& s = params.shape();
  running_.assign(s.layers, std::vector<double>(s.embed, 0.0));
  x_.resize(s.embed);
  ctx_.resize(s.embed);
  a_.resize(s.hidden);
  b_.resize(s.hidden);
  h_.resize(s.hidden);
  out_.resize(s.embed);
  logits_.resize(s.vocab_size);
}

std::span<const double> Decoder::feed(int token) {
  const auto& s = params_.shape();
  const std::size_t D = s.embed, H = s.hidden, V = s.vocab_size;
  if (token < 0 || static_cast<std::size_t>(token) >= V) {
    throw std::out_of_range("token id " + std::to_string(token) + " out of range");
  }
  if (pos_ >= s.max_positions) throw std::length_error("sequence exceeds max_positions");

  const auto emb = params_.token_embedding().values().subspan(static_cast<std::size_t>(token) * D, D);
  const auto pe = params_.position_embedding().values().subspan(pos_ * D, D);
  for (std::size_t j = 0; j < D; ++j) x_[j] = emb[j] + pe[j];

  const double count = static_cast<double>(pos_ + 1);
  for (std::size_t l = 0; l < s.layers; ++l) {
    auto& run = running_[l];
    for (std::size_t j = 0; j < D; ++j) {
      run[j] += x_[j];
      ctx_[j] = run[j] / count;
    }
    row_matmul(x_, params_.w_in(l).values(), H, a_);
    row_matmul(ctx_, params_.w_ctx(l).values(), H, b_);
    const auto bias = params_.bias(l).values();
    for (std::size_t j = 0; j < H; ++j) h_[j] = std::tanh((a_[j] + b_[j]) + bias[j]);
    row_matmul(h_, params_.w_out(l).values(), D, out_);
    for (std::size_t j = 0; j < D; ++j) x_[j] = x_[j] + out_[j];
  }
  row_matmul(x_, params_.w_vocab().values(), V, logits_);
  const auto bv = params_.b_vocab().values();
  for (std::size_t j = 0; j < V; ++j) logits_[j] = logits_[j] + bv[j];
  ++pos_;
  return logits_;
}

// ---------------------------------------------------------------- sampling

Rollout sample_completion(const PolicyParams& params, const Vocabulary& vocab,
                          std::span<const int> query, const SamplingConfig& config, Rng& rng) {
  if (query.empty()) throw std::invalid_argument("sample_completion: empty query");
  if (!(config.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(config.top_p > 0.0 && config.top_p <= 1.0)) throw std::invalid_argument("top_p must be in (0, 1]");
  if (config.max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  const std::size_t V = params.shape().vocab_size;
  if (vocab.size() != V) throw std::invalid_argument("vocabulary size does not match model");
  if (1 + query.size() + config.max_len > params.shape().max_positions) {
    throw std::length_error("query plus max_len exceeds the model's max_positions");
  }

  Rollout r;
  r.query.assign(query.begin(), query.end());
  Decoder dec(params);
  std::span<const double> logits = dec.feed(vocab.bos());
  for (int t : query) logits = dec.feed(t);

  std::vector<double> scaled(V), logp(V);
  std::vector<int> order(V);
  for (std::size_t step = 0; step < config.max_len; ++step) {
    if (config.temperature == 1.0) {
      log_softmax_row(logits, logp);
    } else {
      for (std::size_t j = 0; j < V; ++j) scaled[j] = logits[j] / config.temperature;
      log_softmax_row(scaled, logp);
    }

    int chosen = -1;
    double chosen_logp = 0.0;
    if (config.top_p < 1.0) {
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logp[a] > logp[b]; });
      double mass = 0.0;
      std::size_t keep = 0;
      while (keep < V && mass < config.top_p) mass += std::exp(logp[order[keep++]]);
      const double u = rng.uniform() * mass;
      double acc = 0.0;
      for (std::size_t k = 0; k < keep; ++k) {
        acc += std::exp(logp[order[k]]);
        if (u < acc || k + 1 == keep) {
          chosen = order[k];
          break;
        }
      }
      chosen_logp = logp[chosen] - std::log(mass);
    } else {
      const double u = rng.uniform();
      double acc = 0.0;
      int last_positive = 0;
      for (std::size_t j = 0; j < V; ++j) {
        const double p = std::exp(logp[j]);
        if (p > 0.0) last_positive = static_cast<int>(j);
        acc += p;
        if (u < acc) {
          chosen = static_cast<int>(j);
          break;
        }
      }
      if (chosen < 0) chosen = last_positive;  // u landed in rounding slack
      chosen_logp = logp[chosen];
    }

    r.completion.push_back(chosen);
    r.logp_old.push_back(chosen_logp);
    if (chosen == vocab.eos()) {
      r.terminated = true;
      break;
    }
    if (step + 1 < config.max_len) logits = dec.feed(chosen);
  }

  auto parsed = parse_completion(vocab, r.completion);
  r.answer = std::move(parsed.answer);
  r.confidence = parsed.confidence;
  r.confidence_clamped = parsed.confidence_clamped;
  return r;
}

// ---------------------------------------------------------------- tape forward

Tensor forward_logits(Tape& tape, const PolicyParams& params, std::span<const int> ids) {
  const auto& s = params.shape();
  std::vector<int> tokens;
  tokens.reserve(ids.size() + 1);
  tokens.push_back(0);  // Vocabulary pins <bos> to id 0
  tokens.insert(tokens.end(), ids.begin(), ids.end());
  if (tokens.size() > s.max_positions) throw std::length_error("sequence exceeds max_positions");
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= s.vocab_size)
      throw std::out_of_range("token id " + std::to_string(t) + " out of range");

  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = tape.add(tape.gather_rows(params.token_embedding(), tokens),
                      tape.gather_rows(params.position_embedding(), positions));
  for (std::size_t l = 0; l < s.layers; ++l) {
    Tensor ctx = tape.causal_mean(x);
    Tensor pre = tape.add(tape.add(tape.matmul(x, params.w_in(l)), tape.matmul(ctx, params.w_ctx(l))),
                          params.bias(l));
    Tensor h = tape.tanh(pre);
    x = tape.add(x, tape.matmul(h, params.w_out(l)));
  }
  return tape.add(tape.matmul(x, params.w_vocab()), params.b_vocab());
}

SequenceLogprob sequence_logprob(Tape& tape, const PolicyParams& params, std::span<const int> query,
                                 std::span<const int> completion) {
  if (completion.empty()) throw std::invalid_argument("sequence_logprob: empty completion");
  std::vector<int> ids(query.begin(), query.end());
  ids.insert(ids.end(), completion.begin(), completion.end() - 1);
  Tensor logits = forward_logits(tape, params, ids);
  Tensor logp = tape.log_softmax(logits);
  std::vector<std::size_t> rows(completion.size()), cols(completion.size());
  for (std::size_t t = 0; t < completion.size(); ++t) {
    rows[t] = query.size() + t;
    if (completion[t] < 0 || static_cast<std::size_t>(completion[t]) >= params.shape().vocab_size) {
      throw std::out_of_range("completion token id out of range");
    }
    cols[t] = static_cast<std::size_t>(completion[t]);
  }
  SequenceLogprob out;
  out.per_token = tape.gather(logp, rows, cols);
  out.total = tape.sum(out.per_token);
  out.normalized = tape.scale(out.total, 1.0 / static_cast<double>(completion.size()));
  return out;
}

LogprobValues sequence_logprob(const PolicyParams& params, std::span<const int> query,
                               std::span<const int> completion) {
  Tape tape = Tape::inference();
  auto lp = sequence_logprob(tape, params, query, completion);
  return {lp.total.item(), std::vector<double>(lp.per_token.values().begin(), lp.per_token.values().end())};
}

double length_normalized_logprob(const PolicyParams& params, std::span<const int> query,
                                 std::span<const int> completion) {
  if (completion.empty()) throw std::invalid_argument("length_normalized_logprob: empty completion");
  Tape tape = Tape::inference();
  return sequence_logprob(tape, params, query, completion).normalized.item();
}

}  // namespace amirgrpo::policy
