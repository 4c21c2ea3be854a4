#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace spanexplain {

// Reserved token ids; never reassigned by vocabulary building.
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kBosId = 2;
inline constexpr std::int32_t kSepId = 3;

inline const char* kPadToken = "<pad>";
inline const char* kUnkToken = "<unk>";
inline const char* kBosToken = "<bos>";
inline const char* kSepToken = "<sep>";

// Lowercased whitespace-and-punctuation segmentation. A token is a run of
// alphanumeric characters, an apostrophe glued to a following alphanumeric
// run ("it's" -> "it", "'s"), or a single punctuation character.
std::vector<std::string> segment_text(const std::string& text);

// Join tokens with single spaces; inverse of segment_text up to casing and
// original whitespace.
std::string detokenize(const std::vector<std::string>& tokens);
std::string detokenize(const std::vector<std::string>& tokens, std::size_t first, std::size_t last);

class Example;

class Vocab {
 public:
  Vocab();

  // Deterministic: tokens ordered by frequency (desc), ties lexicographic.
  // Built from the training split only.
  static Vocab build(const std::vector<Example>& train_split, std::size_t min_freq = 1);

  // Rebuild from an id-ordered token list (checkpoint loading).
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::int32_t id_of(const std::string& token) const;  // kUnkId when absent
  const std::string& token_of(std::int32_t id) const;
  std::size_t size() const { return tokens_.size(); }

  // All tokens in id order, reserved entries included.
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// BOS-prefixed token ids for a single text; throws input_error on empty text.
std::vector<std::int32_t> tokenize(const std::string& text, const Vocab& vocab);

// BOS premise SEP hypothesis.
std::vector<std::int32_t> tokenize_pair(const std::string& premise, const std::string& hypothesis,
                                        const Vocab& vocab);

}  // namespace spanexplain
