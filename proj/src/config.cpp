#include "amirgrpo/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace amirgrpo {

std::string_view algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::grpo: return "grpo";
    case Algorithm::amir_grpo: return "amir-grpo";
    case Algorithm::gspo: return "gspo";
    case Algorithm::amir_gspo: return "amir-gspo";
  }
  return "?";
}

bool uses_preference(Algorithm a) { return a == Algorithm::amir_grpo || a == Algorithm::amir_gspo; }
bool sequence_level(Algorithm a) { return a == Algorithm::gspo || a == Algorithm::amir_gspo; }

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

amir::LambdaConfig TrainConfig::lambda_config() const {
  amir::LambdaConfig c;
  c.initial = lambda_init;
  c.band_lo = lambda_lo;
  c.band_hi = lambda_hi;
  c.step = lambda_step;
  c.min = lambda_min;
  c.max = lambda_max;
  c.warmup = lambda_warmup;
  c.smoothing = lambda_smoothing;
  return c;
}

diffmath::AdamWConfig TrainConfig::adamw_config() const {
  return {lr, adam_beta1, adam_beta2, adam_eps, weight_decay};
}

policy::ModelShape TrainConfig::model_shape(std::size_t vocab_size) const {
  return {vocab_size, embed, hidden, layers, max_positions};
}

namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view why) {
  throw ConfigError("config field '" + std::string(key) + "': cannot use '" + std::string(value) + "': " +
                    std::string(why));
}

double to_double(std::string_view key, std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad_value(key, s, "expected a number");
  if (!std::isfinite(v)) bad_value(key, s, "must be finite");
  return v;
}

std::uint64_t to_u64(std::string_view key, std::string_view s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad_value(key, s, "expected a non-negative integer");
  return v;
}

int to_int(std::string_view key, std::string_view s) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad_value(key, s, "expected an integer");
  return v;
}

bool to_bool(std::string_view key, std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  bad_value(key, s, "expected true or false");
}

double positive(std::string_view key, std::string_view s) {
  double v = to_double(key, s);
  if (!(v > 0.0)) bad_value(key, s, "must be positive");
  return v;
}

double non_negative(std::string_view key, std::string_view s) {
  double v = to_double(key, s);
  if (v < 0.0) bad_value(key, s, "must be non-negative");
  return v;
}

std::size_t count(std::string_view key, std::string_view s) { return static_cast<std::size_t>(to_u64(key, s)); }

std::size_t positive_count(std::string_view key, std::string_view s) {
  auto v = count(key, s);
  if (v == 0) bad_value(key, s, "must be at least 1");
  return v;
}

struct Field {
  const char* name;
  const char* help;
  std::function<void(TrainConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

std::string str(std::size_t v) { return std::to_string(v); }
std::string str(bool v) { return v ? "true" : "false"; }

#define F_DOUBLE(member, conv, help)                                                                    \
  Field { #member, help, [](TrainConfig& c, std::string_view k, std::string_view v) { c.member = conv(k, v); }, \
          [](const TrainConfig& c) { return format_double(c.member); } }
#define F_COUNT(member, conv, help)                                                                     \
  Field { #member, help, [](TrainConfig& c, std::string_view k, std::string_view v) { c.member = conv(k, v); }, \
          [](const TrainConfig& c) { return str(c.member); } }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"algorithm", "objective: grpo | amir-grpo | gspo | amir-gspo",
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         if (v == "grpo") c.algorithm = Algorithm::grpo;
         else if (v == "amir-grpo") c.algorithm = Algorithm::amir_grpo;
         else if (v == "gspo") c.algorithm = Algorithm::gspo;
         else if (v == "amir-gspo") c.algorithm = Algorithm::amir_gspo;
         else bad_value(k, v, "unknown algorithm");
       },
       [](const TrainConfig& c) { return std::string(algorithm_name(c.algorithm)); }},
      F_COUNT(group_size, count, "completions per query (G)"),
      F_COUNT(batch_queries, positive_count, "queries per step"),
      F_DOUBLE(epsilon, to_double, "clip range for the importance ratio"),
      F_DOUBLE(gamma, non_negative, "KL penalty weight"),
      F_DOUBLE(beta_dpo, positive, "scale of the preference logit"),
      {"delta_r", "minimum reward gap for a preference pair (auto = 10% of the maximum reward)",
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         if (v == "auto") c.delta_r.reset();
         else c.delta_r = positive(k, v);
       },
       [](const TrainConfig& c) { return c.delta_r ? format_double(*c.delta_r) : std::string("auto"); }},
      F_DOUBLE(lambda_init, non_negative, "initial preference weight"),
      F_DOUBLE(lambda_lo, positive, "lower edge of the contribution-ratio band"),
      F_DOUBLE(lambda_hi, positive, "upper edge of the contribution-ratio band"),
      F_DOUBLE(lambda_step, to_double, "multiplicative lambda adjustment (> 1)"),
      F_DOUBLE(lambda_min, non_negative, "lambda floor"),
      F_DOUBLE(lambda_max, non_negative, "lambda ceiling"),
      F_COUNT(lambda_warmup, count, "controller updates before lambda may change"),
      F_DOUBLE(lambda_smoothing, non_negative, "EMA decay of the magnitudes driving lambda"),
      {"ratio_mode", "contribution measure: grad_norm | loss",
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         if (v == "grad_norm") c.ratio_mode = RatioMode::grad_norm;
         else if (v == "loss") c.ratio_mode = RatioMode::loss;
         else bad_value(k, v, "expected grad_norm or loss");
       },
       [](const TrainConfig& c) { return std::string(c.ratio_mode == RatioMode::loss ? "loss" : "grad_norm"); }},
      {"logprob_norm", "sequence log-prob in the preference logit: length | sum",
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         if (v == "length") c.logprob_norm = amir::LogprobNorm::length;
         else if (v == "sum") c.logprob_norm = amir::LogprobNorm::sum;
         else bad_value(k, v, "expected length or sum");
       },
       [](const TrainConfig& c) {
         return std::string(c.logprob_norm == amir::LogprobNorm::length ? "length" : "sum");
       }},
      {"pair_cap", "keep at most this many pairs per group (none = all)",
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         if (v == "none") c.pair_cap.reset();
         else c.pair_cap = count(k, v);
       },
       [](const TrainConfig& c) { return c.pair_cap ? str(*c.pair_cap) : std::string("none"); }},
      F_DOUBLE(lr, positive, "AdamW learning rate"),
      F_DOUBLE(weight_decay, non_negative, "AdamW decoupled weight decay"),
      F_DOUBLE(adam_beta1, to_double, "AdamW first-moment decay"),
      F_DOUBLE(adam_beta2, to_double, "AdamW second-moment decay"),
      F_DOUBLE(adam_eps, positive, "AdamW denominator epsilon"),
      F_DOUBLE(temperature, positive, "training sampling temperature"),
      F_DOUBLE(top_p, positive, "training nucleus mass"),
      F_COUNT(max_len, positive_count, "completion length cap in tokens"),
      F_COUNT(total_steps, count, "optimizer steps"),
      {"seed", "single source of all randomness",
       [](TrainConfig& c, std::string_view k, std::string_view v) { c.seed = to_u64(k, v); },
       [](const TrainConfig& c) { return std::to_string(c.seed); }},
      F_COUNT(ref_refresh_interval, count, "steps between reference refreshes (0 = never)"),
      F_COUNT(inner_epochs, positive_count, "optimizer passes per sampled batch"),
      F_DOUBLE(std_guard, positive, "group reward std below which advantages are zeroed"),
      {"std_mode", "advantage std: population | sample",
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         if (v == "population") c.std_mode = grpo::StdMode::population;
         else if (v == "sample") c.std_mode = grpo::StdMode::sample;
         else bad_value(k, v, "expected population or sample");
       },
       [](const TrainConfig& c) {
         return std::string(c.std_mode == grpo::StdMode::population ? "population" : "sample");
       }},
      {"separate_reference", "keep the KL reference fixed and refresh only the preference reference",
       [](TrainConfig& c, std::string_view k, std::string_view v) { c.separate_reference = to_bool(k, v); },
       [](const TrainConfig& c) { return str(c.separate_reference); }},
      {"family", "task family: addition-chain | modular-arithmetic | digit-parity | bracket-evaluation",
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         try {
           c.family = tasks::parse_family(v);
         } catch (const std::invalid_argument&) {
           bad_value(k, v, "unknown task family");
         }
       },
       [](const TrainConfig& c) { return std::string(tasks::family_name(c.family)); }},
      {"difficulty_min", "lowest task difficulty",
       [](TrainConfig& c, std::string_view k, std::string_view v) { c.difficulty_min = to_int(k, v); },
       [](const TrainConfig& c) { return std::to_string(c.difficulty_min); }},
      {"difficulty_max", "highest task difficulty",
       [](TrainConfig& c, std::string_view k, std::string_view v) { c.difficulty_max = to_int(k, v); },
       [](const TrainConfig& c) { return std::to_string(c.difficulty_max); }},
      F_COUNT(train_tasks, positive_count, "training pool size"),
      F_COUNT(eval_tasks, count, "held-out pool size"),
      F_COUNT(eval_interval, count, "steps between held-out evaluations (0 = final only)"),
      F_COUNT(eval_n, positive_count, "samples per held-out task"),
      F_DOUBLE(eval_temperature, positive, "evaluation sampling temperature"),
      F_DOUBLE(eval_top_p, positive, "evaluation nucleus mass"),
      F_COUNT(checkpoint_interval, count, "steps between checkpoints (0 = final only)"),
      F_COUNT(warmstart_steps, count, "supervised steps on well-formed completions before RL (0 = off)"),
      F_COUNT(warmstart_batch, positive_count, "sequences per warm-start step"),
      F_DOUBLE(warmstart_lr, positive, "warm-start learning rate"),
      F_DOUBLE(warmstart_correct, non_negative, "probability a warm-start target carries the true answer"),
      F_COUNT(embed, positive_count, "model width"),
      F_COUNT(hidden, positive_count, "mixing layer width"),
      F_COUNT(layers, positive_count, "mixing layers"),
      F_COUNT(max_positions, positive_count, "position table size"),
      F_DOUBLE(w_corr, non_negative, "correctness reward weight"),
      F_DOUBLE(w_fmt, non_negative, "format reward weight"),
      F_DOUBLE(w_calib, non_negative, "calibration reward weight"),
  };
  return table;
}

#undef F_DOUBLE
#undef F_COUNT

const Field& find_field(std::string_view key) {
  for (const auto& f : fields())
    if (key == f.name) return f;
  throw ConfigError("unknown config field '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> out = [] {
    std::vector<ConfigField> v;
    for (const auto& f : fields()) v.push_back({f.name, f.help});
    return v;
  }();
  return out;
}

void set_field(TrainConfig& config, std::string_view key, std::string_view value) {
  find_field(key).set(config, key, trim(value));
}

std::string get_field(const TrainConfig& config, std::string_view key) { return find_field(key).get(config); }

void apply_overrides(TrainConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    set_field(config, trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
}

TrainConfig parse_config(std::string_view text) {
  TrainConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    set_field(config, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string render_config(const TrainConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.name) + " = " + f.get(config) + "\n";
  return out;
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.group_size < 2) fail("group_size must be >= 2");
  if (!(c.epsilon > 0.0 && c.epsilon < 1.0)) fail("epsilon must be in (0, 1)");
  if (!(c.top_p > 0.0 && c.top_p <= 1.0)) fail("top_p must be in (0, 1]");
  if (!(c.eval_top_p > 0.0 && c.eval_top_p <= 1.0)) fail("eval_top_p must be in (0, 1]");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0)) fail("adam_beta1 must be in [0, 1)");
  if (!(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0)) fail("adam_beta2 must be in [0, 1)");
  if (c.difficulty_min < 1 || c.difficulty_min > c.difficulty_max) fail("need 1 <= difficulty_min <= difficulty_max");
  if (c.warmstart_correct > 1.0) fail("warmstart_correct must be in [0, 1]");
  if (c.w_corr + c.w_fmt + c.w_calib <= 0.0) fail("reward weights must not all be zero");
  try {
    amir::validate(c.lambda_config());
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

std::string config_help() {
  const TrainConfig defaults;
  std::string out = "Config fields (key = value, default shown):\n";
  for (const auto& f : fields()) {
    std::string line = "  " + std::string(f.name) + " = " + f.get(defaults);
    if (line.size() < 36) line.resize(36, ' ');
    out += line + "  " + f.help + "\n";
  }
  return out;
}

}  // namespace amirgrpo
