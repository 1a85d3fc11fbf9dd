#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace amirgrpo::policy {

using TokenIds = std::vector<int>;

// Bijection between token strings and ids. The default vocabulary holds the
// structural markers of the completion protocol
//   <a>ANSWER</a><c>CONFIDENCE</c><eos>
// plus digits and the operator symbols used by the task families.
class Vocabulary {
 public:
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kAnswerOpen = "<a>";
  static constexpr std::string_view kAnswerClose = "</a>";
  static constexpr std::string_view kConfOpen = "<c>";
  static constexpr std::string_view kConfClose = "</c>";

  Vocabulary();  // default task vocabulary
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const;
  std::optional<int> find(std::string_view token) const;
  int id(std::string_view token) const;  // throws if absent
  bool contains(int id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  int bos() const { return bos_; }
  int eos() const { return eos_; }
  int answer_open() const { return answer_open_; }
  int answer_close() const { return answer_close_; }
  int conf_open() const { return conf_open_; }
  int conf_close() const { return conf_close_; }

  // Greedy longest-match tokenization; throws on untokenizable input.
  TokenIds encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::size_t longest_ = 0;
  int bos_, eos_, answer_open_, answer_close_, conf_open_, conf_close_;
};

struct ParsedCompletion {
  std::optional<std::string> answer;
  std::optional<double> confidence;  // clamped into [0, 1]
  bool confidence_clamped = false;
};

// Answer: text strictly between the first <a> and the next </a>.
// Confidence: decimal text between the first <c> after the answer (or
// anywhere, if there is no answer) and the next </c>.
ParsedCompletion parse_completion(const Vocabulary& vocab, std::span<const int> completion);

}  // namespace amirgrpo::policy
