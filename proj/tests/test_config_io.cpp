#include <filesystem>
#include <fstream>

#include "amirgrpo/config.hpp"
#include "amirgrpo/jsonl.hpp"
#include "doctest.h"

using namespace amirgrpo;

TEST_CASE("defaults validate and render back to themselves") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  const auto text = render_config(c);
  auto back = parse_config(text);
  CHECK(render_config(back) == text);
  CHECK(c.margin() == doctest::Approx(0.39));
  CHECK(uses_preference(Algorithm::amir_gspo));
  CHECK_FALSE(uses_preference(Algorithm::grpo));
  CHECK(sequence_level(Algorithm::gspo));
}

TEST_CASE("every field can be set and read by name") {
  TrainConfig c;
  for (const auto& f : config_fields()) {
    const auto v = get_field(c, f.name);
    CHECK_NOTHROW(set_field(c, f.name, v));
    CHECK(get_field(c, f.name) == v);
  }
  CHECK(config_help().find("warmstart_correct") != std::string::npos);
}

TEST_CASE("overrides and config text") {
  TrainConfig c;
  apply_overrides(c, {"algorithm=gspo", "group_size=4", "delta_r=0.25", "pair_cap=6", "lr=1e-3"});
  CHECK(c.algorithm == Algorithm::gspo);
  CHECK(c.group_size == 4);
  REQUIRE(c.delta_r);
  CHECK(*c.delta_r == 0.25);
  CHECK(c.margin() == 0.25);
  REQUIRE(c.pair_cap);
  CHECK(*c.pair_cap == 6);
  apply_overrides(c, {"delta_r=auto", "pair_cap=none"});
  CHECK_FALSE(c.delta_r);
  CHECK_FALSE(c.pair_cap);

  auto parsed = parse_config("# comment\n  beta_dpo = 2  # trailing\n\nseed=9\n");
  CHECK(parsed.beta_dpo == 2.0);
  CHECK(parsed.seed == 9);
}

TEST_CASE("bad configuration is rejected") {
  TrainConfig c;
  CHECK_THROWS_AS(set_field(c, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(set_field(c, "group_size", "many"), ConfigError);
  CHECK_THROWS_AS(set_field(c, "lr", "-1"), ConfigError);
  CHECK_THROWS_AS(set_field(c, "algorithm", "ppo"), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"novalue"}), ConfigError);
  CHECK_THROWS_AS(parse_config("seed 3\n"), ConfigError);
  TrainConfig g;
  g.group_size = 1;
  CHECK_THROWS_AS(validate(g), ConfigError);
  TrainConfig e;
  e.epsilon = 1.0;
  CHECK_THROWS_AS(validate(e), ConfigError);
  TrainConfig l;
  l.lambda_lo = 0.6;
  CHECK_THROWS_AS(validate(l), ConfigError);
  CHECK_THROWS(load_config("/nonexistent/amirgrpo.cfg"));
}

TEST_CASE("format_double is shortest round-trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(2.0) == "2");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("task lines round-trip") {
  policy::Vocabulary vocab;
  auto tasks = tasks::generate_instances(tasks::Family::addition_chain, 5, 3, 2, vocab);
  for (const auto& t : tasks) {
    auto back = io::parse_task(io::task_line(t), vocab);
    CHECK(back.text == t.text);
    CHECK(back.answer == t.answer);
    CHECK(back.query == t.query);
    CHECK(back.difficulty == t.difficulty);
    CHECK(back.seed == t.seed);
  }
  CHECK_THROWS_AS(io::parse_task("{\"query\": 1}", vocab), io::IoError);
  CHECK_THROWS_AS(io::parse_task("not json", vocab), io::IoError);
}

TEST_CASE("rollout lines round-trip") {
  io::RolloutRecord r;
  r.query_id = 3;
  r.sample_id = 1;
  r.tokens = {2, 8, 3, 1};
  r.logp_old = {-0.1, -2.5, -1e-9, -0.3};
  r.reward = {1, 0.5, 0.91, 2.0 + 0.45 + 0.91};
  r.answer = "2";
  r.correct = true;
  auto back = io::parse_rollout(io::rollout_line(r));
  CHECK(back.query_id == 3);
  CHECK(back.sample_id == 1);
  CHECK(back.tokens == r.tokens);
  CHECK(back.logp_old == r.logp_old);
  CHECK(back.reward.total == r.reward.total);
  CHECK(back.answer == r.answer);
  CHECK_FALSE(back.confidence);
  CHECK(back.correct);
}

TEST_CASE("pair lines carry a null logit until evaluated") {
  amir::PreferencePair p{0, 1, 3, 1.5, std::nullopt};
  auto line = io::pair_line(7, p, 2.0, 0.5);
  CHECK(line.find("\"z\":null") != std::string::npos);
  CHECK(line.find("\"i\":1") != std::string::npos);
  p.z = 0.25;
  CHECK(io::pair_line(7, p, 2.0, 0.5).find("\"z\":0.25") != std::string::npos);
}

TEST_CASE("text files are written whole or not at all") {
  const auto dir = std::filesystem::temp_directory_path() / "amirgrpo_io_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  io::write_text(dir / "a.txt", "hello\n");
  CHECK(io::read_text(dir / "a.txt") == "hello\n");
  CHECK_THROWS_AS(io::read_text(dir / "missing.txt"), io::IoError);
  CHECK_THROWS_AS(io::write_text(dir / "no" / "such" / "dir.txt", "x"), io::IoError);
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++entries;
  CHECK(entries == 1);
  std::filesystem::remove_all(dir);
}
