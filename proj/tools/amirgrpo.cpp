#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "amirgrpo/amir.hpp"
#include "amirgrpo/checkpoint.hpp"
#include "amirgrpo/config.hpp"
#include "amirgrpo/evalkit.hpp"
#include "amirgrpo/jsonl.hpp"
#include "amirgrpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace amirgrpo;

namespace {

enum Exit { kOk = 0, kConfig = 2, kRuntime = 3, kIo = 4 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::size_t threads = 1;
};

TrainConfig resolve(const Common& c) {
  TrainConfig cfg;
  if (!c.config_path.empty()) {
    try {
      cfg = load_config(c.config_path);
    } catch (const std::ios_base::failure& e) {
      throw io::IoError(e.what());
    }
  }
  apply_overrides(cfg, c.overrides);
  validate(cfg);
  return cfg;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "config file (key = value lines)");
  cmd->add_option("--set", c.overrides, "override a config field, key=value (repeatable)");
  cmd->add_option("--threads", c.threads, "worker threads (1 = reference mode)")->check(CLI::PositiveNumber);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string tasks_text(const std::vector<tasks::TaskInstance>& ts) {
  std::string out;
  for (const auto& t : ts) out += io::task_line(t);
  return out;
}

std::string rollouts_text(const trainer::EvalResult& r) {
  std::string out;
  for (const auto& s : r.samples) out += io::rollout_line(io::to_record(s));
  return out;
}

// c_q per query id from a rollout log; n must agree across queries.
std::vector<evalkit::QuestionCounts> counts_from(const std::vector<io::RolloutRecord>& recs) {
  std::map<std::size_t, evalkit::QuestionCounts> by_query;
  for (const auto& r : recs) {
    auto& q = by_query[r.query_id];
    ++q.n;
    q.c += r.correct ? 1 : 0;
  }
  std::vector<evalkit::QuestionCounts> out;
  for (const auto& [id, q] : by_query) out.push_back(q);
  return out;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      ks.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw ConfigError("bad k value '" + item + "'");
    }
  }
  if (ks.empty()) throw ConfigError("no k values given");
  return ks;
}

// ------------------------------------------------------------------ verbs

int cmd_gen_tasks(const Common& c, const std::string& out_dir) {
  auto cfg = resolve(c);
  policy::Vocabulary vocab;
  auto split = trainer::make_tasks(cfg, vocab);
  ensure_dir(out_dir);
  io::write_text(fs::path(out_dir) / "train_tasks.jsonl", tasks_text(split.train));
  io::write_text(fs::path(out_dir) / "eval_tasks.jsonl", tasks_text(split.eval));
  std::printf("wrote %zu train and %zu eval tasks to %s\n", split.train.size(), split.eval.size(), out_dir.c_str());
  return kOk;
}

tasks::TaskSplit load_split(const TrainConfig& cfg, const policy::Vocabulary& vocab, const std::string& train_path,
                            const std::string& eval_path) {
  auto split = trainer::make_tasks(cfg, vocab);
  if (!train_path.empty()) split.train = io::read_tasks(train_path, vocab);
  if (!eval_path.empty()) split.eval = io::read_tasks(eval_path, vocab);
  return split;
}

int cmd_train(const Common& c, const std::string& out_dir, const std::string& train_path,
              const std::string& eval_path) {
  auto cfg = resolve(c);
  policy::Vocabulary vocab;
  auto split = load_split(cfg, vocab, train_path, eval_path);
  const fs::path dir(out_dir);
  ensure_dir(dir);

  std::string metrics = trainer::metrics_header();
  trainer::TrainOptions opts;
  opts.threads = c.threads;
  opts.on_metric = [&](const trainer::MetricRecord& r) {
    metrics += trainer::metrics_row(r);
    if (r.pass1) std::fprintf(stderr, "step %zu  reward %.4f  pass@1 %.4f\n", r.step, r.mean_reward, *r.pass1);
  };
  opts.on_checkpoint = [&](std::size_t step, const policy::PolicyParams& p) {
    if (step == cfg.total_steps) return;
    ensure_dir(dir / "checkpoints");
    policy::save_checkpoint(dir / "checkpoints" / ("step-" + std::to_string(step) + ".json"), vocab, p);
  };
  auto result = trainer::train(cfg, vocab, split, opts);
  io::write_text(dir / "config.txt", render_config(cfg));
  io::write_text(dir / "metrics.csv", metrics);
  policy::save_checkpoint(dir / "checkpoint.json", vocab, result.params);
  policy::save_checkpoint(dir / "initial.json", vocab, result.initial);
  io::write_text(dir / "eval_tasks.jsonl", tasks_text(split.eval));
  std::printf("trained %zu steps (%s); initial pass@1 %s, final pass@1 %s\n", cfg.total_steps,
              std::string(algorithm_name(cfg.algorithm)).c_str(),
              result.initial_pass1 ? format_double(*result.initial_pass1).c_str() : "n/a",
              result.final_pass1 ? format_double(*result.final_pass1).c_str() : "n/a");
  return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& tasks_path, std::size_t n,
             const std::string& ks_text, const std::string& out_dir) {
  auto cfg = resolve(c);
  const auto ks = parse_ks(ks_text);
  auto ck = policy::load_checkpoint(checkpoint);
  std::vector<tasks::TaskInstance> task_list =
      tasks_path.empty() ? trainer::make_tasks(cfg, ck.vocab).eval : io::read_tasks(tasks_path, ck.vocab);
  if (task_list.empty()) throw ConfigError("eval: no tasks");
  if (n == 0) n = cfg.eval_n;
  for (auto k : ks)
    if (k == 0 || k > n) throw ConfigError("eval: every k must be in [1, n]");
  auto result = trainer::evaluate(ck.params, ck.vocab, task_list, n, cfg.eval_sampling(), cfg.reward_weights(),
                                  trainer::eval_seed(cfg.seed, 0), c.threads);
  std::vector<evalkit::QuestionCounts> counts;
  for (auto cq : result.correct) counts.push_back({n, cq});
  const auto rows = evalkit::pass_at_k_grid(counts, ks);
  const fs::path dir(out_dir);
  ensure_dir(dir);
  io::write_text(dir / "passk.csv", evalkit::pass_at_k_csv(rows));
  io::write_text(dir / "rollouts.jsonl", rollouts_text(result));
  for (const auto& r : rows) std::printf("pass@%zu = %s\n", r.k, format_double(r.value).c_str());
  return kOk;
}

int cmd_pass_at_k(const std::string& rollouts, const std::string& ks_text, const std::string& out) {
  const auto ks = parse_ks(ks_text);
  const auto counts = counts_from(io::read_rollouts(rollouts));
  if (counts.empty()) throw ConfigError("pass-at-k: empty rollout log");
  std::vector<evalkit::PassAtKRow> rows;
  try {
    rows = evalkit::pass_at_k_grid(counts, ks);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto text = evalkit::pass_at_k_csv(rows);
  if (out.empty()) std::fputs(text.c_str(), stdout);
  else io::write_text(out, text);
  return kOk;
}

int cmd_mine_pairs(const Common& c, const std::string& rollouts, const std::string& out, const std::string& policy_path,
                   const std::string& reference_path, const std::string& tasks_path) {
  auto cfg = resolve(c);
  const auto recs = io::read_rollouts(rollouts);
  std::map<std::size_t, std::vector<const io::RolloutRecord*>> groups;
  for (const auto& r : recs) groups[r.query_id].push_back(&r);

  const bool with_z = !policy_path.empty();
  if (with_z && (reference_path.empty() || tasks_path.empty())) {
    throw ConfigError("mine-pairs: --policy needs --reference and --tasks");
  }
  std::optional<policy::Checkpoint> theta, ref;
  std::vector<tasks::TaskInstance> task_list;
  if (with_z) {
    theta = policy::load_checkpoint(policy_path);
    ref = policy::load_checkpoint(reference_path);
    task_list = io::read_tasks(tasks_path, theta->vocab);
  }

  std::string text;
  std::size_t total = 0;
  for (auto& [qid, members] : groups) {
    std::sort(members.begin(), members.end(),
              [](const auto* a, const auto* b) { return a->sample_id < b->sample_id; });
    std::vector<double> rewards;
    for (const auto* m : members) rewards.push_back(m->reward.total);
    auto pairs = amir::mine_pairs(rewards, cfg.margin(), cfg.pair_cap);
    if (with_z && !pairs.empty()) {
      if (qid >= task_list.size()) throw ConfigError("mine-pairs: query_id outside task file");
      grpo::RolloutGroup g;
      g.query_id = qid;
      for (const auto* m : members) {
        policy::Rollout r;
        r.query = task_list[qid].query;
        r.completion = m->tokens;
        g.rollouts.push_back(std::move(r));
      }
      for (auto& p : pairs) p.z = amir::dpo_logit(p, g, theta->params, ref->params, cfg.beta_dpo, cfg.logprob_norm);
    }
    for (const auto& p : pairs) text += io::pair_line(qid, p, rewards[p.preferred], rewards[p.rejected]);
    total += pairs.size();
  }
  if (out.empty()) std::fputs(text.c_str(), stdout);
  else io::write_text(out, text);
  std::fprintf(stderr, "mined %zu pairs from %zu groups\n", total, groups.size());
  return kOk;
}

struct MarginRow {
  std::size_t correct = 0, incorrect = 0;
  std::optional<double> margin;
};

MarginRow margin_for(const policy::Checkpoint& ck, const std::vector<tasks::TaskInstance>& task_list,
                     const std::vector<io::RolloutRecord>& recs) {
  std::vector<policy::Rollout> good, bad;
  for (const auto& r : recs) {
    if (r.query_id >= task_list.size()) throw ConfigError("analyze-margin: query_id outside task file");
    if (r.tokens.empty()) continue;
    policy::Rollout ro;
    ro.query = task_list[r.query_id].query;
    ro.completion = r.tokens;
    (r.correct ? good : bad).push_back(std::move(ro));
  }
  return {good.size(), bad.size(), evalkit::preference_margin(ck.params, good, bad)};
}

int cmd_analyze_margin(const std::vector<std::string>& checkpoints, const std::vector<std::string>& logs,
                       const std::string& tasks_path, const std::string& out) {
  if (checkpoints.size() != logs.size()) throw ConfigError("analyze-margin: one rollout log per checkpoint");
  std::string text = "model,correct,incorrect,margin\n";
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    auto ck = policy::load_checkpoint(checkpoints[i]);
    auto task_list = io::read_tasks(tasks_path, ck.vocab);
    auto row = margin_for(ck, task_list, io::read_rollouts(logs[i]));
    text += fs::path(checkpoints[i]).filename().string() + ',' + std::to_string(row.correct) + ',' +
            std::to_string(row.incorrect) + ',' + (row.margin ? format_double(*row.margin) : "") + '\n';
  }
  if (out.empty()) std::fputs(text.c_str(), stdout);
  else io::write_text(out, text);
  return kOk;
}

std::vector<std::size_t> solved_counts(const std::string& path) {
  std::vector<std::size_t> out;
  for (const auto& q : counts_from(io::read_rollouts(path))) out.push_back(q.c);
  return out;
}

int cmd_analyze_coverage(const std::string& base, const std::string& grpo_log, const std::string& amir_log,
                         const std::string& out) {
  std::vector<evalkit::CoverageCell> cells;
  try {
    cells = evalkit::coverage_table(solved_counts(base), solved_counts(grpo_log), solved_counts(amir_log));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto text = evalkit::coverage_csv(cells);
  if (out.empty()) std::fputs(text.c_str(), stdout);
  else io::write_text(out, text);
  return kOk;
}

// Failure points as JSONL: {step, steps, label?}.
int cmd_analyze_locality(const std::string& input, double bandwidth, const std::string& out) {
  std::vector<evalkit::FailurePoint> points;
  std::istringstream in(io::read_text(input));
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      std::optional<evalkit::FailureLabel> label;
      if (j.contains("label") && !j["label"].is_null()) label = evalkit::parse_failure_label(j["label"].get<std::string>());
      points.push_back(evalkit::make_failure_point(j.at("step").get<std::size_t>(), j.at("steps").get<std::size_t>(), label));
    } catch (const std::exception& e) {
      throw io::IoError(input + ": " + e.what());
    }
  }
  evalkit::DensityGrid grid;
  try {
    grid = evalkit::locality_density(points, bandwidth);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const auto text = evalkit::density_csv(grid);
  if (out.empty()) std::fputs(text.c_str(), stdout);
  else io::write_text(out, text);
  return kOk;
}

int cmd_sweep_beta(const Common& c, const std::string& betas_text, const std::string& ks_text,
                   const std::string& out_dir) {
  auto base_cfg = resolve(c);
  const auto ks = parse_ks(ks_text);
  std::vector<double> betas;
  {
    std::stringstream ss(betas_text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      TrainConfig probe = base_cfg;
      set_field(probe, "beta_dpo", item);
      betas.push_back(probe.beta_dpo);
    }
  }
  if (betas.empty()) throw ConfigError("sweep-beta: no beta values");
  for (auto k : ks)
    if (k == 0 || k > base_cfg.eval_n) throw ConfigError("sweep-beta: every k must be in [1, eval_n]");
  policy::Vocabulary vocab;
  auto split = trainer::make_tasks(base_cfg, vocab);
  if (split.eval.empty()) throw ConfigError("sweep-beta: eval_tasks must be positive");

  auto run = [&](TrainConfig cfg) {
    trainer::TrainOptions opts;
    opts.threads = c.threads;
    auto result = trainer::train(cfg, vocab, split, opts);
    auto ev = trainer::evaluate(result.params, vocab, split.eval, cfg.eval_n, cfg.eval_sampling(),
                                cfg.reward_weights(), trainer::eval_seed(cfg.seed, 0), c.threads);
    std::vector<evalkit::QuestionCounts> counts;
    for (auto cq : ev.correct) counts.push_back({cfg.eval_n, cq});
    return evalkit::pass_at_k_grid(counts, ks);
  };

  TrainConfig grpo_cfg = base_cfg;
  grpo_cfg.algorithm = sequence_level(base_cfg.algorithm) ? Algorithm::gspo : Algorithm::grpo;
  std::fprintf(stderr, "baseline %s\n", std::string(algorithm_name(grpo_cfg.algorithm)).c_str());
  const auto baseline = run(grpo_cfg);

  std::string text = "beta_dpo,k,pass_baseline,pass_amir,delta\n";
  for (double beta : betas) {
    TrainConfig cfg = base_cfg;
    cfg.algorithm = sequence_level(base_cfg.algorithm) ? Algorithm::amir_gspo : Algorithm::amir_grpo;
    cfg.beta_dpo = beta;
    std::fprintf(stderr, "beta_dpo %s\n", format_double(beta).c_str());
    const auto rows = run(cfg);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      text += format_double(beta) + ',' + std::to_string(rows[i].k) + ',' + format_double(baseline[i].value) + ',' +
              format_double(rows[i].value) + ',' + format_double(rows[i].value - baseline[i].value) + '\n';
    }
  }
  ensure_dir(out_dir);
  io::write_text(fs::path(out_dir) / "sweep_beta.csv", text);
  std::fputs(text.c_str(), stdout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-relative policy optimization with intra-group preference regularization on toy arithmetic"};
  app.require_subcommand(1);
  app.footer(config_help());

  Common common;
  std::string out_dir = "out", out, train_path, eval_path, checkpoint, tasks_path, rollouts, ks = "1,2,4";
  std::string policy_path, reference_path, base_log, grpo_log, amir_log, locality_in, betas = "0.1,0.5,1,2";
  std::size_t n = 0;
  double bandwidth = evalkit::kDefaultBandwidth;
  std::vector<std::string> margin_ckpts, margin_logs;

  auto* gen = app.add_subcommand("gen-tasks", "write train/eval task pools as JSONL");
  add_common(gen, common);
  gen->add_option("--out-dir", out_dir, "output directory");

  auto* tr = app.add_subcommand("train", "train a policy; writes metrics.csv and checkpoint.json");
  add_common(tr, common);
  tr->add_option("--out-dir", out_dir, "output directory");
  tr->add_option("--tasks", train_path, "training task JSONL (default: generated from config)");
  tr->add_option("--eval-tasks", eval_path, "held-out task JSONL (default: generated from config)");

  auto* ev = app.add_subcommand("eval", "sample n completions per task; writes passk.csv and rollouts.jsonl");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "policy checkpoint")->required();
  ev->add_option("--tasks", tasks_path, "task JSONL (default: held-out pool from config)");
  ev->add_option("-n,--n", n, "samples per task (default: eval_n)");
  ev->add_option("--k", ks, "comma-separated k values");
  ev->add_option("--out-dir", out_dir, "output directory");

  auto* pk = app.add_subcommand("pass-at-k", "Pass@k table from a rollout log");
  pk->add_option("--rollouts", rollouts, "rollout JSONL")->required();
  pk->add_option("--k", ks, "comma-separated k values");
  pk->add_option("--out", out, "output CSV (default: stdout)");

  auto* mp = app.add_subcommand("mine-pairs", "preference pairs from a rollout log as JSONL");
  add_common(mp, common);
  mp->add_option("--rollouts", rollouts, "rollout JSONL")->required();
  mp->add_option("--out", out, "output JSONL (default: stdout)");
  mp->add_option("--policy", policy_path, "checkpoint for evaluating z");
  mp->add_option("--reference", reference_path, "reference checkpoint for z");
  mp->add_option("--tasks", tasks_path, "task JSONL the log's query ids refer to");

  auto* am = app.add_subcommand("analyze-margin", "correct-minus-incorrect mean normalized log-prob");
  am->add_option("--checkpoint", margin_ckpts, "checkpoint (repeatable)")->required();
  am->add_option("--rollouts", margin_logs, "rollout JSONL per checkpoint (repeatable)")->required();
  am->add_option("--tasks", tasks_path, "task JSONL the logs refer to")->required();
  am->add_option("--out", out, "output CSV (default: stdout)");

  auto* ac = app.add_subcommand("analyze-coverage", "solved-set coverage across three rollout logs");
  ac->add_option("--base", base_log, "base model rollout JSONL")->required();
  ac->add_option("--grpo", grpo_log, "baseline rollout JSONL")->required();
  ac->add_option("--amir", amir_log, "regularized rollout JSONL")->required();
  ac->add_option("--out", out, "output CSV (default: stdout)");

  auto* al = app.add_subcommand("analyze-locality", "density of first-error positions");
  al->add_option("--input", locality_in, "failure point JSONL {step, steps, label}")->required();
  al->add_option("--bandwidth", bandwidth, "kernel bandwidth");
  al->add_option("--out", out, "output CSV (default: stdout)");

  auto* sb = app.add_subcommand("sweep-beta", "train and evaluate per beta_dpo; Pass@k delta vs the baseline");
  add_common(sb, common);
  sb->add_option("--betas", betas, "comma-separated beta_dpo values");
  sb->add_option("--k", ks, "comma-separated k values");
  sb->add_option("--out-dir", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen_tasks(common, out_dir);
    if (*tr) return cmd_train(common, out_dir, train_path, eval_path);
    if (*ev) return cmd_eval(common, checkpoint, tasks_path, n, ks, out_dir);
    if (*pk) return cmd_pass_at_k(rollouts, ks, out);
    if (*mp) return cmd_mine_pairs(common, rollouts, out, policy_path, reference_path, tasks_path);
    if (*am) return cmd_analyze_margin(margin_ckpts, margin_logs, tasks_path, out);
    if (*ac) return cmd_analyze_coverage(base_log, grpo_log, amir_log, out);
    if (*al) return cmd_analyze_locality(locality_in, bandwidth, out);
    if (*sb) return cmd_sweep_beta(common, betas, ks, out_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const policy::CheckpointError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const io::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const trainer::TrainingAborted& e) {
    std::fprintf(stderr, "aborted: %s\n%s", e.what(), e.dump().c_str());
    return kRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kOk;
}
