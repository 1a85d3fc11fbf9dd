#include "amirgrpo/jsonl.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace amirgrpo::io {

using nlohmann::json;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

namespace {

template <typename Fn>
auto parse_lines(const std::filesystem::path& path, Fn&& fn) {
  std::istringstream in(read_text(path));
  std::vector<decltype(fn(std::string_view{}))> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(fn(line));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

json parse_object(std::string_view line) {
  json j = json::parse(line);
  if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
  return j;
}

}  // namespace

std::string task_line(const tasks::TaskInstance& t) {
  json j = {{"query", t.text},
            {"answer", t.answer},
            {"family", std::string(tasks::family_name(t.family))},
            {"difficulty", t.difficulty},
            {"seed", t.seed}};
  return j.dump() + "\n";
}

tasks::TaskInstance parse_task(std::string_view line, const policy::Vocabulary& vocab) try {
  json j = parse_object(line);
  tasks::TaskInstance t;
  t.text = j.at("query").get<std::string>();
  t.answer = j.at("answer").get<std::string>();
  t.family = tasks::parse_family(j.at("family").get<std::string>());
  t.difficulty = j.at("difficulty").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.query = tasks::encode_query(vocab, t.text);
  return t;
} catch (const IoError&) {
  throw;
} catch (const std::exception& e) {
  throw IoError(std::string("bad task line: ") + e.what());
}

std::vector<tasks::TaskInstance> read_tasks(const std::filesystem::path& path, const policy::Vocabulary& vocab) {
  return parse_lines(path, [&](std::string_view l) { return parse_task(l, vocab); });
}

RolloutRecord to_record(const trainer::EvalSample& s) {
  RolloutRecord r;
  r.query_id = s.query_id;
  r.sample_id = s.sample_id;
  r.tokens = s.rollout.completion;
  r.logp_old = s.rollout.logp_old;
  r.reward = s.reward;
  r.answer = s.rollout.answer;
  r.confidence = s.rollout.confidence;
  r.correct = s.reward.correctness == 1;
  return r;
}

std::string rollout_line(const RolloutRecord& r) {
  json j;
  j["query_id"] = r.query_id;
  j["sample_id"] = r.sample_id;
  j["tokens"] = r.tokens;
  j["logp_old"] = r.logp_old;
  j["reward"] = {{"corr", r.reward.correctness},
                 {"fmt", r.reward.format},
                 {"calib", r.reward.calibration},
                 {"total", r.reward.total}};
  j["answer"] = r.answer ? json(*r.answer) : json(nullptr);
  j["confidence"] = r.confidence ? json(*r.confidence) : json(nullptr);
  j["correct"] = r.correct;
  return j.dump() + "\n";
}

RolloutRecord parse_rollout(std::string_view line) try {
  json j = parse_object(line);
  RolloutRecord r;
  r.query_id = j.at("query_id").get<std::size_t>();
  r.sample_id = j.at("sample_id").get<std::size_t>();
  r.tokens = j.at("tokens").get<policy::TokenIds>();
  r.logp_old = j.value("logp_old", std::vector<double>{});
  const auto& rw = j.at("reward");
  r.reward.correctness = rw.value("corr", 0);
  r.reward.format = rw.value("fmt", 0.0);
  r.reward.calibration = rw.value("calib", 0.0);
  r.reward.total = rw.at("total").get<double>();
  if (j.contains("answer") && !j["answer"].is_null()) r.answer = j["answer"].get<std::string>();
  if (j.contains("confidence") && !j["confidence"].is_null()) r.confidence = j["confidence"].get<double>();
  r.correct = j.value("correct", r.reward.correctness == 1);
  return r;
} catch (const IoError&) {
  throw;
} catch (const std::exception& e) {
  throw IoError(std::string("bad rollout line: ") + e.what());
}

std::vector<RolloutRecord> read_rollouts(const std::filesystem::path& path) {
  return parse_lines(path, [](std::string_view l) { return parse_rollout(l); });
}

std::string pair_line(std::size_t query_id, const amir::PreferencePair& p, double r_i, double r_j) {
  json j;
  j["query_id"] = query_id;
  j["i"] = p.preferred;
  j["j"] = p.rejected;
  j["r_i"] = r_i;
  j["r_j"] = r_j;
  j["gap"] = p.reward_gap;
  j["z"] = p.z ? json(*p.z) : json(nullptr);
  return j.dump() + "\n";
}

}  // namespace amirgrpo::io
