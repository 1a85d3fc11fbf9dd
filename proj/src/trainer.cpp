#include "amirgrpo/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "amirgrpo/amir.hpp"
#include "amirgrpo/grpo.hpp"
#include "amirgrpo/optim.hpp"
#include "amirgrpo/parallel.hpp"
#include "amirgrpo/rng.hpp"

namespace amirgrpo::trainer {

using policy::PolicyParams;

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::string describe_group(const grpo::RolloutGroup& g, const policy::Vocabulary& vocab) {
  std::ostringstream out;
  out << "group query_id=" << g.query_id << "\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& r = g.rollouts[i];
    out << "  [" << i << "] query=" << vocab.decode(r.query) << " completion=" << vocab.decode(r.completion)
        << " reward=" << format_double(g.rewards[i]) << " advantage=" << format_double(g.advantages[i]);
    out << " logp_old=";
    for (double v : g.old_logp[i]) out << format_double(v) << ' ';
    if (i < g.ref_logp.size()) {
      out << "logp_ref=";
      for (double v : g.ref_logp[i]) out << format_double(v) << ' ';
    }
    out << "\n";
  }
  return out.str();
}

std::vector<std::size_t> pick_batch(std::uint64_t seed, std::size_t step, std::size_t pool, std::size_t batch) {
  Rng rng = stream_rng(seed, Stream::batch, {step});
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = std::min(batch, pool);
  for (std::size_t i = 0; i < take; ++i) {
    auto j = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  // Sampling with replacement fills the rest when the pool is smaller than a batch.
  while (idx.size() < batch) idx.push_back(static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(pool - 1))));
  return idx;
}

std::vector<std::vector<double>> copy_grads(std::span<const diffmath::Tensor> params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    if (p.has_grad()) out.emplace_back(p.grad().begin(), p.grad().end());
    else out.emplace_back(p.size(), 0.0);
  }
  return out;
}

double norm_of(const std::vector<std::vector<double>>& g) {
  double s = 0.0;
  for (const auto& t : g)
    for (double v : t) s += v * v;
  return std::sqrt(s);
}

}  // namespace

std::string metrics_header() {
  return "# amirgrpo metrics v" + std::to_string(kMetricsVersion) +
         "\nstep,mean_reward,accuracy,adv_mean,adv_std,grpo_loss,pref_loss,lambda,ratio,raw_ratio,mean_kl,pairs,"
         "degenerate_groups,len_correct,len_incorrect,pass1,clip_fraction,grad_norm,kl_clamped,conf_clamped\n";
}

std::string metrics_row(const MetricRecord& r) {
  std::string s;
  s += std::to_string(r.step) + ',' + format_double(r.mean_reward) + ',' + format_double(r.accuracy) + ',' + format_double(r.adv_mean) + ',' +
       format_double(r.adv_std) + ',' + format_double(r.grpo_loss) + ',' + format_double(r.pref_loss) + ',' +
       format_double(r.lambda) + ',' + opt(r.ratio) + ',' + opt(r.raw_ratio) + ',' + format_double(r.mean_kl) +
       ',' + std::to_string(r.pairs) + ',' + std::to_string(r.degenerate_groups) + ',' + opt(r.len_correct) +
       ',' + opt(r.len_incorrect) + ',' + opt(r.pass1) + ',' + format_double(r.clip_fraction) + ',' +
       format_double(r.grad_norm) + ',' + std::to_string(r.kl_clamped) + ',' + std::to_string(r.conf_clamped) +
       '\n';
  return s;
}

double EvalResult::pass_at_1() const {
  if (correct.empty() || n == 0) return 0.0;
  double s = 0.0;
  for (auto c : correct) s += static_cast<double>(c) / static_cast<double>(n);
  return s / static_cast<double>(correct.size());
}

EvalResult evaluate(const PolicyParams& params, const policy::Vocabulary& vocab,
                    const std::vector<tasks::TaskInstance>& task_list, std::size_t n,
                    const policy::SamplingConfig& sampling, const tasks::RewardWeights& weights,
                    std::uint64_t seed, std::size_t threads) {
  if (n == 0) throw std::invalid_argument("evaluate: n must be >= 1");
  EvalResult out;
  out.n = n;
  out.samples.resize(task_list.size() * n);
  parallel_for(out.samples.size(), threads, [&](std::size_t k) {
    const std::size_t q = k / n, s = k % n;
    Rng rng = stream_rng(seed, Stream::eval, {q, s});
    auto& sample = out.samples[k];
    sample.query_id = q;
    sample.sample_id = s;
    sample.rollout = policy::sample_completion(params, vocab, task_list[q].query, sampling, rng);
    sample.reward = tasks::score(sample.rollout, task_list[q].answer, vocab, weights);
  });
  out.correct.assign(task_list.size(), 0);
  for (const auto& s : out.samples) out.correct[s.query_id] += static_cast<std::size_t>(s.reward.correctness);
  return out;
}

std::uint64_t eval_seed(std::uint64_t seed, std::size_t step) {
  return derive_seed(seed, {static_cast<std::uint64_t>(Stream::eval), step});
}

PolicyParams initial_policy(const TrainConfig& config, const policy::Vocabulary& vocab) {
  Rng rng = stream_rng(config.seed, Stream::init);
  return PolicyParams::initialize(config.model_shape(vocab.size()), rng);
}

void warm_start(PolicyParams& params, const TrainConfig& config, const policy::Vocabulary& vocab,
                const std::vector<tasks::TaskInstance>& pool) {
  if (config.warmstart_steps == 0) return;
  if (pool.empty()) throw ConfigError("warm start needs a non-empty task pool");
  diffmath::OptimizerState optimizer({config.warmstart_lr, config.adam_beta1, config.adam_beta2, config.adam_eps, 0.0});
  const auto last = static_cast<std::int64_t>(pool.size() - 1);
  for (std::size_t step = 0; step < config.warmstart_steps; ++step) {
    Rng rng = stream_rng(config.seed, Stream::warmstart, {step});
    diffmath::Tape tape;
    std::vector<diffmath::Tensor> terms;
    for (std::size_t k = 0; k < config.warmstart_batch; ++k) {
      const auto& task = pool[static_cast<std::size_t>(rng.integer(0, last))];
      const auto& other = pool[static_cast<std::size_t>(rng.integer(0, last))];
      const auto& donor = rng.uniform() < config.warmstart_correct ? task : other;
      const auto tenth = rng.integer(0, 10);
      const std::string conf = tenth == 10 ? "1" : "0." + std::to_string(tenth);
      auto completion = vocab.encode("<a>" + donor.answer + "</a><c>" + conf + "</c><eos>");
      if (task.query.size() + completion.size() > config.max_positions) continue;
      terms.push_back(policy::sequence_logprob(tape, params, task.query, completion).normalized);
    }
    if (terms.empty()) throw ConfigError("warm start: sequences exceed max_positions");
    tape.backward(tape.scale(tape.mean(tape.stack(terms)), -1.0));
    diffmath::adamw_step(params.tensors(), optimizer);
  }
}

PolicyParams base_policy(const TrainConfig& config, const policy::Vocabulary& vocab,
                         const std::vector<tasks::TaskInstance>& pool) {
  PolicyParams p = initial_policy(config, vocab);
  warm_start(p, config, vocab, pool);
  return p;
}

tasks::TaskSplit make_tasks(const TrainConfig& config, const policy::Vocabulary& vocab) {
  return tasks::generate_split(config.family, config.difficulty_min, config.difficulty_max, config.train_tasks,
                               config.eval_tasks, derive_seed(config.seed, {static_cast<std::uint64_t>(Stream::tasks)}),
                               vocab);
}

TrainResult train(const TrainConfig& config, const policy::Vocabulary& vocab, const tasks::TaskSplit& task_split,
                  const TrainOptions& options) {
  validate(config);
  if (task_split.train.empty()) throw ConfigError("train: empty task source");
  const auto& pool = task_split.train;
  const std::size_t G = config.group_size;
  const std::size_t B = config.batch_queries;
  const auto weights = config.reward_weights();
  const auto sampling = config.sampling();
  const bool prefer = uses_preference(config.algorithm);
  const bool seq = sequence_level(config.algorithm);
  const bool recorded_old = config.temperature == 1.0 && config.top_p == 1.0;
  const double delta_r = config.margin();

  TrainResult result;
  PolicyParams theta = base_policy(config, vocab, pool);
  result.initial = theta.snapshot();
  PolicyParams kl_ref = theta.snapshot();
  PolicyParams pref_ref;  // only used with separate_reference
  if (config.separate_reference) pref_ref = theta.snapshot();
  std::uint64_t kl_ref_hash = kl_ref.fingerprint();
  std::uint64_t pref_ref_hash = config.separate_reference ? pref_ref.fingerprint() : 0;

  diffmath::OptimizerState optimizer(config.adamw_config());
  amir::LambdaController controller(config.lambda_config());

  auto run_eval = [&](std::size_t step) -> std::optional<double> {
    if (task_split.eval.empty()) return std::nullopt;
    return evaluate(theta, vocab, task_split.eval, config.eval_n, config.eval_sampling(), weights,
                    eval_seed(config.seed, step), options.threads)
        .pass_at_1();
  };
  result.initial_pass1 = run_eval(0);

  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    // Reference refresh happens before sampling so the whole step sees one snapshot.
    if (config.ref_refresh_interval > 0 && step > 1 && (step - 1) % config.ref_refresh_interval == 0) {
      if (config.separate_reference) {
        pref_ref = theta.snapshot();
        pref_ref_hash = pref_ref.fingerprint();
      } else {
        kl_ref = theta.snapshot();
        kl_ref_hash = kl_ref.fingerprint();
      }
    }
    if (kl_ref.fingerprint() != kl_ref_hash ||
        (config.separate_reference && pref_ref.fingerprint() != pref_ref_hash)) {
      throw TrainingAborted("reference snapshot changed between refreshes", "step " + std::to_string(step));
    }

    // Rollouts: one independent stream per (step, batch slot, sample).
    const auto batch = pick_batch(config.seed, step, pool.size(), B);
    std::vector<policy::Rollout> rollouts(B * G);
    std::vector<tasks::RewardBreakdown> scores(B * G);
    parallel_for(B * G, options.threads, [&](std::size_t k) {
      const std::size_t b = k / G, s = k % G;
      Rng rng = stream_rng(config.seed, Stream::rollout, {step, b, s});
      const auto& task = pool[batch[b]];
      rollouts[k] = policy::sample_completion(theta, vocab, task.query, sampling, rng);
      scores[k] = tasks::score(rollouts[k], task.answer, vocab, weights);
    });

    std::vector<grpo::RolloutGroup> groups;
    groups.reserve(B);
    MetricRecord rec;
    rec.step = step;
    double len_c = 0, len_i = 0;
    std::size_t n_c = 0, n_i = 0;
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<policy::Rollout> rs(rollouts.begin() + b * G, rollouts.begin() + (b + 1) * G);
      std::vector<double> rewards(G);
      std::vector<tasks::RewardBreakdown> bd(scores.begin() + b * G, scores.begin() + (b + 1) * G);
      for (std::size_t s = 0; s < G; ++s) {
        rewards[s] = bd[s].total;
        rec.mean_reward += rewards[s];
        if (rs[s].confidence_clamped) ++rec.conf_clamped;
        const auto len = static_cast<double>(rs[s].completion.size());
        if (bd[s].correctness) len_c += len, ++n_c;
        else len_i += len, ++n_i;
      }
      auto g = grpo::make_group(batch[b], std::move(rs), std::move(rewards), config.std_guard, config.std_mode);
      g.breakdowns = std::move(bd);
      if (g.degenerate) ++rec.degenerate_groups;
      groups.push_back(std::move(g));
    }
    rec.mean_reward /= static_cast<double>(B * G);
    rec.accuracy = static_cast<double>(n_c) / static_cast<double>(B * G);
    if (n_c) rec.len_correct = len_c / static_cast<double>(n_c);
    if (n_i) rec.len_incorrect = len_i / static_cast<double>(n_i);
    {
      double s = 0, ss = 0;
      for (const auto& g : groups)
        for (double a : g.advantages) s += a;
      rec.adv_mean = s / static_cast<double>(B * G);
      for (const auto& g : groups)
        for (double a : g.advantages) ss += (a - rec.adv_mean) * (a - rec.adv_mean);
      rec.adv_std = std::sqrt(ss / static_cast<double>(B * G));
    }

    // Constants for the objective: behavior and reference log-probs.
    std::vector<std::vector<double>> pref_ref_logp;
    parallel_for(B, options.threads, [&](std::size_t b) {
      if (!recorded_old) grpo::attach_behavior(groups[b], theta);
      grpo::attach_reference(groups[b], kl_ref);
    });
    std::vector<grpo::RolloutGroup> pref_groups;
    if (prefer && config.separate_reference) {
      pref_groups = groups;
      parallel_for(B, options.threads, [&](std::size_t b) { grpo::attach_reference(pref_groups[b], pref_ref); });
    }

    // Pairs depend only on rewards, so they are mined once per batch.
    std::vector<std::vector<amir::PreferencePair>> pairs(B);
    if (prefer) {
      for (std::size_t b = 0; b < B; ++b) {
        pairs[b] = amir::mine_pairs(groups[b].rewards, delta_r, config.pair_cap);
        for (auto& p : pairs[b]) p.group = b;
        rec.pairs += pairs[b].size();
      }
    }

    const double lambda = controller.lambda();
    rec.lambda = prefer ? lambda : 0.0;
    double grpo_mag = 0.0, pref_mag = 0.0;
    auto params = theta.tensors();

    for (std::size_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
      diffmath::Tape tape;
      std::vector<std::vector<policy::SequenceLogprob>> lp(B);
      std::vector<diffmath::Tensor> group_losses;
      double kl_sum = 0.0, clip_sum = 0.0;
      std::size_t clamped = 0, tokens = 0;
      for (std::size_t b = 0; b < B; ++b) {
        lp[b] = grpo::policy_logprobs(tape, theta, groups[b]);
        auto term = seq ? grpo::gspo_loss(tape, groups[b], lp[b], config.epsilon, config.gamma)
                        : grpo::grpo_loss(tape, groups[b], lp[b], config.epsilon, config.gamma);
        if (!std::isfinite(term.loss.item())) {
          throw TrainingAborted("non-finite policy loss at step " + std::to_string(step),
                                describe_group(groups[b], vocab));
        }
        kl_sum += term.stats.mean_kl * static_cast<double>(term.stats.tokens);
        tokens += term.stats.tokens;
        clip_sum += term.stats.clip_fraction;
        clamped += term.stats.kl_clamped;
        group_losses.push_back(term.loss);
      }
      diffmath::Tensor grpo_term = tape.mean(tape.stack(group_losses));
      rec.grpo_loss = grpo_term.item();
      rec.mean_kl = kl_sum / static_cast<double>(tokens);
      rec.clip_fraction = clip_sum / static_cast<double>(B);
      rec.kl_clamped = clamped;

      tape.backward(grpo_term);
      if (prefer && rec.pairs > 0) {
        auto& source = config.separate_reference ? pref_groups : groups;
        std::vector<amir::GroupPairs> gp;
        for (std::size_t b = 0; b < B; ++b) {
          if (!pairs[b].empty()) gp.push_back({&source[b], lp[b], pairs[b]});
        }
        auto pref = amir::preference_loss(tape, gp, config.beta_dpo, config.logprob_norm);
        rec.pref_loss = pref.loss.item();
        if (!std::isfinite(rec.pref_loss)) {
          std::string dump;
          for (const auto& g : gp) dump += describe_group(*g.group, vocab);
          throw TrainingAborted("non-finite preference loss at step " + std::to_string(step), dump);
        }
        // Each term is differentiated on its own so both gradient norms are available.
        auto g_policy = copy_grads(params);
        for (auto& p : params) p.zero_grad();
        tape.backward(pref.loss);
        auto g_pref = copy_grads(params);
        for (std::size_t t = 0; t < params.size(); ++t) {
          auto dst = params[t].mutable_grad();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = g_policy[t][k] + lambda * g_pref[t][k];
        }
        if (config.ratio_mode == RatioMode::grad_norm) {
          grpo_mag = norm_of(g_policy);
          pref_mag = norm_of(g_pref);
        } else {
          grpo_mag = std::abs(rec.grpo_loss);
          pref_mag = std::abs(rec.pref_loss);
        }
      }
      rec.grad_norm = diffmath::grad_norm(params);
      if (!std::isfinite(rec.grad_norm)) {
        std::string dump;
        for (const auto& g : groups) dump += describe_group(g, vocab);
        throw TrainingAborted("non-finite gradient at step " + std::to_string(step), dump);
      }
      diffmath::adamw_step(params, optimizer);
    }

    if (prefer && rec.pairs > 0) {
      controller.update(grpo_mag, pref_mag);
      rec.ratio = controller.ratio();
      rec.raw_ratio = controller.raw_ratio();
    }

    const bool final_step = step == config.total_steps;
    if (final_step || (config.eval_interval > 0 && step % config.eval_interval == 0)) {
      rec.pass1 = run_eval(step);
      if (final_step) result.final_pass1 = rec.pass1;
    }
    if (options.on_checkpoint &&
        (final_step || (config.checkpoint_interval > 0 && step % config.checkpoint_interval == 0))) {
      options.on_checkpoint(step, theta);
    }
    if (options.on_metric) options.on_metric(rec);
    result.records.push_back(std::move(rec));
  }
  if (config.total_steps == 0) result.final_pass1 = result.initial_pass1;
  result.params = std::move(theta);
  return result;
}

}  // namespace amirgrpo::trainer
