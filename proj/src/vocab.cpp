#include "amirgrpo/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace amirgrpo::policy {

namespace {
std::vector<std::string> default_tokens() {
  std::vector<std::string> t = {"<bos>", "<eos>", "<a>", "</a>", "<c>", "</c>"};
  for (char d = '0'; d <= '9'; ++d) t.emplace_back(1, d);
  for (const char* s : {"+", "-", "*", "%", "(", ")", "=", ".", "even", "odd"}) t.emplace_back(s);
  return t;
}
}  // namespace

Vocabulary::Vocabulary() : Vocabulary(default_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw std::invalid_argument("vocabulary contains an empty token");
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
    }
    longest_ = std::max(longest_, tokens_[i].size());
  }
  bos_ = id(kBos);
  if (bos_ != 0) throw std::invalid_argument("<bos> must be token id 0");
  eos_ = id(kEos);
  answer_open_ = id(kAnswerOpen);
  answer_close_ = id(kAnswerClose);
  conf_open_ = id(kConfOpen);
  conf_close_ = id(kConfClose);
}

const std::string& Vocabulary::token(int id) const {
  if (!contains(id)) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  auto found = find(token);
  if (!found) throw std::out_of_range("unknown token '" + std::string(token) + "'");
  return *found;
}

TokenIds Vocabulary::encode(std::string_view text) const {
  TokenIds out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[pos]))) {
      ++pos;
      continue;
    }
    bool matched = false;
    for (std::size_t len = std::min(longest_, text.size() - pos); len > 0; --len) {
      if (auto hit = find(text.substr(pos, len))) {
        out.push_back(*hit);
        pos += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      throw std::invalid_argument("cannot tokenize '" + std::string(text.substr(pos)) + "'");
    }
  }
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string s;
  for (int id : ids) s += token(id);
  return s;
}

namespace {
std::optional<double> parse_decimal(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::size_t i = 0;
  double value = 0.0;
  bool digits = false;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
    value = value * 10.0 + (s[i] - '0');
    digits = true;
    ++i;
  }
  if (!digits) return std::nullopt;
  if (i < s.size()) {
    if (s[i] != '.') return std::nullopt;
    ++i;
    double place = 0.1;
    bool frac = false;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
      value += (s[i] - '0') * place;
      place /= 10.0;
      frac = true;
      ++i;
    }
    if (!frac || i != s.size()) return std::nullopt;
  }
  return value;
}

// Position of the first `token` at or after `from`.
std::optional<std::size_t> find_token(std::span<const int> ids, int token, std::size_t from) {
  for (std::size_t i = from; i < ids.size(); ++i)
    if (ids[i] == token) return i;
  return std::nullopt;
}
}  // namespace

ParsedCompletion parse_completion(const Vocabulary& vocab, std::span<const int> completion) {
  ParsedCompletion out;
  std::size_t conf_search_from = 0;
  if (auto open = find_token(completion, vocab.answer_open(), 0)) {
    if (auto close = find_token(completion, vocab.answer_close(), *open + 1)) {
      if (*close > *open + 1) out.answer = vocab.decode(completion.subspan(*open + 1, *close - *open - 1));
      conf_search_from = *close + 1;
    }
  }
  if (auto open = find_token(completion, vocab.conf_open(), conf_search_from)) {
    if (auto close = find_token(completion, vocab.conf_close(), *open + 1)) {
      const auto text = vocab.decode(completion.subspan(*open + 1, *close - *open - 1));
      if (auto value = parse_decimal(text)) {
        if (*value > 1.0) {
          out.confidence = 1.0;
          out.confidence_clamped = true;
        } else {
          out.confidence = *value;
        }
      }
    }
  }
  return out;
}

}  // namespace amirgrpo::policy
