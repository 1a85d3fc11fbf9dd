#include "amirgrpo/tasks.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "amirgrpo/rng.hpp"

namespace amirgrpo::tasks {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::addition_chain: return "addition-chain";
    case Family::modular_arithmetic: return "modular-arithmetic";
    case Family::digit_parity: return "digit-parity";
    case Family::bracket_evaluation: return "bracket-evaluation";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (auto f : {Family::addition_chain, Family::modular_arithmetic, Family::digit_parity,
                 Family::bracket_evaluation}) {
    if (family_name(f) == name) return f;
  }
  throw std::invalid_argument("unknown task family '" + std::string(name) + "'");
}

policy::TokenIds encode_query(const policy::Vocabulary& vocab, std::string_view text) {
  auto ids = vocab.encode(text);
  ids.push_back(vocab.id("="));
  return ids;
}

namespace {

struct Draw {
  std::string text;
  std::string answer;
};

std::int64_t pow10(int e) {
  std::int64_t v = 1;
  while (e-- > 0) v *= 10;
  return v;
}

Draw draw_one(Family family, int difficulty, Rng& rng) {
  switch (family) {
    case Family::addition_chain: {
      std::int64_t sum = 0;
      std::string text;
      for (int i = 0; i < difficulty; ++i) {
        const auto v = rng.integer(0, 9);
        sum += v;
        if (i) text += '+';
        text += std::to_string(v);
      }
      return {text, std::to_string(sum)};
    }
    case Family::modular_arithmetic: {
      const auto hi = pow10(difficulty) - 1;
      const auto a = rng.integer(0, hi), b = rng.integer(0, hi), m = rng.integer(2, 9);
      return {"(" + std::to_string(a) + "+" + std::to_string(b) + ")%" + std::to_string(m),
              std::to_string((a + b) % m)};
    }
    case Family::digit_parity: {
      std::string text;
      std::int64_t sum = 0;
      for (int i = 0; i < difficulty; ++i) {
        const auto v = rng.integer(0, 9);
        sum += v;
        text += static_cast<char>('0' + v);
      }
      return {text, sum % 2 == 0 ? "even" : "odd"};
    }
    case Family::bracket_evaluation: {
      std::string text;
      std::int64_t total = 0;
      for (int g = 0; g < difficulty; ++g) {
        const auto a = rng.integer(0, 9), b = rng.integer(0, 9);
        const bool inner_plus = rng.integer(0, 1) == 1;
        const std::int64_t value = inner_plus ? a + b : a - b;
        bool outer_plus = true;
        if (g) {
          outer_plus = rng.integer(0, 1) == 1;
          text += outer_plus ? '+' : '-';
        }
        text += "(" + std::to_string(a) + (inner_plus ? "+" : "-") + std::to_string(b) + ")";
        total += outer_plus ? value : -value;
      }
      return {text, std::to_string(total)};
    }
  }
  throw std::logic_error("unhandled family");
}

int min_difficulty(Family f) { return f == Family::addition_chain ? 2 : 1; }

}  // namespace

namespace {

std::vector<TaskInstance> generate_mixed(Family family, std::size_t count, int lo, int hi,
                                         std::uint64_t seed, const policy::Vocabulary& vocab) {
  if (lo > hi) throw std::invalid_argument("empty difficulty range");
  for (int d : {lo, hi}) {
    if (d < min_difficulty(family) || d > 9) {
      throw std::invalid_argument("difficulty " + std::to_string(d) + " out of range for " +
                                  std::string(family_name(family)));
    }
  }
  Rng rng = stream_rng(seed, Stream::tasks,
                       {static_cast<std::uint64_t>(family), static_cast<std::uint64_t>(lo),
                        static_cast<std::uint64_t>(hi)});
  std::set<std::string> seen;
  std::vector<TaskInstance> out;
  out.reserve(count);
  const std::size_t max_attempts = 200 * count + 1000;
  for (std::size_t attempt = 0; out.size() < count; ++attempt) {
    if (attempt >= max_attempts) {
      throw std::invalid_argument("cannot draw " + std::to_string(count) + " unique " +
                                  std::string(family_name(family)) + " queries at difficulty " +
                                  std::to_string(lo) + ".." + std::to_string(hi));
    }
    const int difficulty = static_cast<int>(rng.integer(lo, hi));
    auto d = draw_one(family, difficulty, rng);
    if (!seen.insert(d.text).second) continue;
    TaskInstance t;
    t.query = encode_query(vocab, d.text);
    t.text = std::move(d.text);
    t.answer = std::move(d.answer);
    t.family = family;
    t.difficulty = difficulty;
    t.seed = seed;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::vector<TaskInstance> generate_instances(Family family, std::size_t count, int difficulty,
                                             std::uint64_t seed, const policy::Vocabulary& vocab) {
  return generate_mixed(family, count, difficulty, difficulty, seed, vocab);
}

TaskSplit generate_split(Family family, int min_difficulty_level, int max_difficulty_level,
                         std::size_t train_count, std::size_t eval_count, std::uint64_t seed,
                         const policy::Vocabulary& vocab) {
  auto pool = generate_mixed(family, train_count + eval_count, min_difficulty_level,
                             max_difficulty_level, seed, vocab);
  // Draw order is already random; the first eval_count instances are held out.
  TaskSplit split;
  split.eval.assign(std::make_move_iterator(pool.begin()),
                    std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(eval_count)));
  split.train.assign(std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(eval_count)),
                     std::make_move_iterator(pool.end()));
  return split;
}

}  // namespace amirgrpo::tasks
