#include <cmath>

#include "amirgrpo/config.hpp"
#include "amirgrpo/trainer.hpp"
#include "doctest.h"

using namespace amirgrpo;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.embed = 8;
  c.hidden = 16;
  c.layers = 1;
  c.max_positions = 24;
  c.max_len = 8;
  c.group_size = 4;
  c.batch_queries = 2;
  c.total_steps = 6;
  c.train_tasks = 20;
  c.eval_tasks = 6;
  c.eval_n = 2;
  c.eval_interval = 3;
  c.warmstart_steps = 5;
  c.warmstart_batch = 4;
  c.lambda_warmup = 1;
  c.lr = 1e-2;
  return c;
}

std::string csv(const trainer::TrainResult& r) {
  std::string out = trainer::metrics_header();
  for (const auto& m : r.records) out += trainer::metrics_row(m);
  return out;
}

}  // namespace

TEST_CASE("training records one metric row per step") {
  policy::Vocabulary vocab;
  auto cfg = tiny_config();
  auto split = trainer::make_tasks(cfg, vocab);
  std::size_t seen = 0;
  trainer::TrainOptions opts;
  opts.on_metric = [&](const trainer::MetricRecord& m) { CHECK(m.step == ++seen); };
  auto result = trainer::train(cfg, vocab, split, opts);
  CHECK(result.records.size() == cfg.total_steps);
  CHECK(seen == cfg.total_steps);
  REQUIRE(result.initial_pass1);
  REQUIRE(result.final_pass1);
  CHECK(result.records[2].pass1);
  CHECK_FALSE(result.records[0].pass1);
  CHECK(result.records.back().pass1 == result.final_pass1);
  for (const auto& m : result.records) {
    CHECK(m.lambda >= cfg.lambda_min);
    CHECK(m.lambda <= cfg.lambda_max);
    CHECK(m.degenerate_groups <= cfg.batch_queries);
    CHECK(std::isfinite(m.grpo_loss));
  }
  CHECK(result.params.fingerprint() != result.initial.fingerprint());
  const auto text = csv(result);
  CHECK(text.rfind("# amirgrpo metrics v1\nstep,", 0) == 0);
}

TEST_CASE("zero lambda reproduces the plain trajectory bit for bit") {
  policy::Vocabulary vocab;
  auto base = tiny_config();
  base.lambda_init = 0.0;
  base.lambda_min = 0.0;
  auto split = trainer::make_tasks(base, vocab);
  auto plain = base;
  plain.algorithm = Algorithm::grpo;
  auto amir_cfg = base;
  amir_cfg.algorithm = Algorithm::amir_grpo;
  auto a = trainer::train(plain, vocab, split);
  auto b = trainer::train(amir_cfg, vocab, split);
  CHECK(a.params.fingerprint() == b.params.fingerprint());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].mean_reward == b.records[i].mean_reward);
    CHECK(a.records[i].grpo_loss == b.records[i].grpo_loss);
  }
}

TEST_CASE("results do not depend on the thread count") {
  policy::Vocabulary vocab;
  auto cfg = tiny_config();
  cfg.algorithm = Algorithm::amir_gspo;
  auto split = trainer::make_tasks(cfg, vocab);
  trainer::TrainOptions one, four;
  four.threads = 4;
  auto a = trainer::train(cfg, vocab, split, one);
  auto b = trainer::train(cfg, vocab, split, four);
  CHECK(csv(a) == csv(b));
  CHECK(a.params.fingerprint() == b.params.fingerprint());
}

TEST_CASE("evaluation is deterministic and consistent with its samples") {
  policy::Vocabulary vocab;
  auto cfg = tiny_config();
  auto split = trainer::make_tasks(cfg, vocab);
  auto params = trainer::base_policy(cfg, vocab, split.train);
  auto a = trainer::evaluate(params, vocab, split.eval, 3, cfg.eval_sampling(), cfg.reward_weights(), 5, 1);
  auto b = trainer::evaluate(params, vocab, split.eval, 3, cfg.eval_sampling(), cfg.reward_weights(), 5, 3);
  CHECK(a.correct == b.correct);
  REQUIRE(a.samples.size() == split.eval.size() * 3);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].rollout.completion == b.samples[i].rollout.completion);
    CHECK(a.samples[i].query_id == i / 3);
    hits += static_cast<std::size_t>(a.samples[i].reward.correctness);
  }
  std::size_t total = 0;
  for (auto c : a.correct) total += c;
  CHECK(total == hits);
  CHECK(a.pass_at_1() == doctest::Approx(double(hits) / double(a.samples.size())));
}

TEST_CASE("a diverging run aborts with a diagnostic dump") {
  policy::Vocabulary vocab;
  auto cfg = tiny_config();
  cfg.lr = 1e300;
  cfg.total_steps = 4;
  auto split = trainer::make_tasks(cfg, vocab);
  try {
    trainer::train(cfg, vocab, split);
    FAIL("expected the run to abort");
  } catch (const trainer::TrainingAborted& e) {
    CHECK_FALSE(e.dump().empty());
  }
}

TEST_CASE("invalid configurations are refused before any work") {
  policy::Vocabulary vocab;
  auto cfg = tiny_config();
  auto split = trainer::make_tasks(cfg, vocab);
  cfg.group_size = 1;
  CHECK_THROWS_AS(trainer::train(cfg, vocab, split), ConfigError);
}

TEST_CASE("metric rows leave absent values empty") {
  trainer::MetricRecord m;
  m.step = 1;
  const auto row = trainer::metrics_row(m);
  CHECK(row.back() == '\n');
  CHECK(row.find(",,") != std::string::npos);
  const auto header = trainer::metrics_header();
  const auto cols = std::count(header.begin() + static_cast<long>(header.find('\n')), header.end(), ',');
  CHECK(std::count(row.begin(), row.end(), ',') == cols);
}
