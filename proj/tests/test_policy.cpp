#include <cmath>
#include <filesystem>
#include <fstream>

#include "amirgrpo/checkpoint.hpp"
#include "amirgrpo/policy.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace amirgrpo;
using namespace testsupport;

TEST_CASE("vocabulary encodes greedily and round-trips") {
  policy::Vocabulary vocab;
  CHECK(vocab.bos() == 0);
  auto ids = vocab.encode("<a>12</a><c>0.5</c><eos>");
  CHECK(ids.size() == 10);
  CHECK(ids.front() == vocab.answer_open());
  CHECK(vocab.decode(ids) == "<a>12</a><c>0.5</c><eos>");
  CHECK(vocab.encode("even").size() == 1);
  CHECK_THROWS(vocab.encode("x"));
  CHECK_THROWS(policy::Vocabulary({"a", "<bos>"}));
  CHECK_THROWS(policy::Vocabulary({"<bos>", "a", "a"}));
}

TEST_CASE("completion parsing extracts answer and confidence") {
  policy::Vocabulary vocab;
  auto p = policy::parse_completion(vocab, vocab.encode("<a>42</a><c>0.7</c><eos>"));
  REQUIRE(p.answer);
  CHECK(*p.answer == "42");
  REQUIRE(p.confidence);
  CHECK(*p.confidence == doctest::Approx(0.7));
  CHECK_FALSE(p.confidence_clamped);

  auto over = policy::parse_completion(vocab, vocab.encode("<a>1</a><c>7</c>"));
  REQUIRE(over.confidence);
  CHECK(*over.confidence == 1.0);
  CHECK(over.confidence_clamped);

  auto none = policy::parse_completion(vocab, vocab.encode("12<eos>"));
  CHECK_FALSE(none.answer);
  CHECK_FALSE(none.confidence);

  auto junk = policy::parse_completion(vocab, vocab.encode("<a>3</a><c>..</c>"));
  CHECK(junk.answer);
  CHECK_FALSE(junk.confidence);
}

TEST_CASE("tape forward and incremental decoder agree bit for bit") {
  policy::Vocabulary vocab;
  auto params = random_params({vocab.size(), 16, 16, 2, 32}, 4);
  Rng rng(1);
  params = jitter(params, rng, 0.3);
  policy::TokenIds ids = vocab.encode("3+4+5=<a>12</a>");
  auto tape = diffmath::Tape::inference();
  auto logits = policy::forward_logits(tape, params, ids);
  policy::Decoder dec(params);
  auto row = dec.feed(vocab.bos());
  const std::size_t V = vocab.size();
  for (std::size_t t = 0; t <= ids.size(); ++t) {
    for (std::size_t v = 0; v < V; ++v) CHECK(row[v] == logits[t * V + v]);
    if (t < ids.size()) row = dec.feed(ids[t]);
  }
}

TEST_CASE("sampled log-probs equal tape log-probs at temperature one") {
  policy::Vocabulary vocab;
  auto params = random_params(tiny_shape(vocab), 2);
  Rng rng(5);
  params = jitter(params, rng, 0.5);
  auto query = vocab.encode("1+2=");
  for (int trial = 0; trial < 20; ++trial) {
    auto r = policy::sample_completion(params, vocab, query, {1.0, 1.0, 8}, rng);
    REQUIRE(r.completion.size() == r.logp_old.size());
    auto lp = policy::sequence_logprob(params, query, r.completion);
    for (std::size_t t = 0; t < lp.per_token.size(); ++t) CHECK(lp.per_token[t] == r.logp_old[t]);
    CHECK(r.completion.size() <= 8);
    CHECK(r.terminated == (r.completion.back() == vocab.eos()));
  }
}

TEST_CASE("sampling is deterministic given the stream") {
  policy::Vocabulary vocab;
  auto params = random_params(tiny_shape(vocab), 2);
  auto query = vocab.encode("7+1=");
  for (double temp : {0.5, 1.0, 1.7}) {
    for (double top_p : {0.3, 0.9, 1.0}) {
      auto a = stream_rng(3, Stream::rollout, {1});
      auto b = stream_rng(3, Stream::rollout, {1});
      auto ra = policy::sample_completion(params, vocab, query, {temp, top_p, 10}, a);
      auto rb = policy::sample_completion(params, vocab, query, {temp, top_p, 10}, b);
      CHECK(ra.completion == rb.completion);
      CHECK(ra.logp_old == rb.logp_old);
    }
  }
}

TEST_CASE("top-p keeps only the nucleus") {
  policy::Vocabulary vocab;
  auto params = policy::PolicyParams::zeros(tiny_shape(vocab));
  // A single dominant token makes the nucleus at small p exactly that token.
  auto& bias = params.tensor("b_vocab");
  bias.mutable_values()[static_cast<std::size_t>(vocab.eos())] = 10.0;
  auto query = vocab.encode("1+1=");
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    auto r = policy::sample_completion(params, vocab, query, {1.0, 0.5, 4}, rng);
    CHECK(r.completion == policy::TokenIds{vocab.eos()});
    CHECK(std::abs(r.logp_old[0]) <= 1e-12);
  }
}

TEST_CASE("sampling validates its configuration") {
  policy::Vocabulary vocab;
  auto params = random_params(tiny_shape(vocab), 2);
  Rng rng(1);
  auto q = vocab.encode("1=");
  CHECK_THROWS(policy::sample_completion(params, vocab, q, {0.0, 1.0, 4}, rng));
  CHECK_THROWS(policy::sample_completion(params, vocab, q, {1.0, 0.0, 4}, rng));
  CHECK_THROWS(policy::sample_completion(params, vocab, q, {1.0, 1.0, 100}, rng));
  CHECK_THROWS(policy::sample_completion(params, vocab, {}, {1.0, 1.0, 4}, rng));
}

TEST_CASE("snapshot is a deep copy and the fingerprint tracks values") {
  policy::Vocabulary vocab;
  auto params = random_params(tiny_shape(vocab), 9);
  auto snap = params.snapshot();
  const auto fp = snap.fingerprint();
  CHECK(fp == params.fingerprint());
  params.tensors()[0].mutable_values()[0] += 1.0;
  CHECK(snap.fingerprint() == fp);
  CHECK(params.fingerprint() != fp);
  CHECK(params.parameter_count() < 5000);
}

TEST_CASE("checkpoints round-trip bit for bit") {
  policy::Vocabulary vocab;
  auto params = random_params({vocab.size(), 8, 12, 2, 20}, 21);
  Rng rng(2);
  params = jitter(params, rng, 1e-3);
  const auto dir = std::filesystem::temp_directory_path() / "amirgrpo_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "p.json";
  policy::save_checkpoint(path, vocab, params);
  auto loaded = policy::load_checkpoint(path);
  CHECK(loaded.vocab == vocab);
  CHECK(loaded.params.shape() == params.shape());
  CHECK(loaded.params.fingerprint() == params.fingerprint());

  std::ofstream(dir / "bad.json") << "{\"version\": 99}";
  CHECK_THROWS_AS(policy::load_checkpoint(dir / "bad.json"), policy::CheckpointError);
  std::ofstream(dir / "junk.json") << "not json";
  CHECK_THROWS_AS(policy::load_checkpoint(dir / "junk.json"), policy::CheckpointError);
  CHECK_THROWS_AS(policy::load_checkpoint(dir / "missing.json"), policy::CheckpointError);
  std::filesystem::remove_all(dir);
}
