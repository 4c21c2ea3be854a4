#include "spanexplain/vocab.hpp"

#include <algorithm>
#include <cctype>

#include "spanexplain/dataset.hpp"
#include "spanexplain/errors.hpp"

namespace spanexplain {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

}  // namespace

std::vector<std::string> segment_text(const std::string& text) {
  std::vector<std::string> out;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    std::string tok;
    if (is_word_char(c)) {
      while (i < n && is_word_char(static_cast<unsigned char>(text[i]))) {
        tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
    } else if (c == '\'' && i + 1 < n && is_word_char(static_cast<unsigned char>(text[i + 1]))) {
      tok.push_back('\'');
      ++i;
      while (i < n && is_word_char(static_cast<unsigned char>(text[i]))) {
        tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
        ++i;
      }
    } else {
      tok.push_back(text[i]);
      ++i;
    }
    out.push_back(std::move(tok));
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  return detokenize(tokens, 0, tokens.empty() ? 0 : tokens.size() - 1);
}

std::string detokenize(const std::vector<std::string>& tokens, std::size_t first, std::size_t last) {
  std::string out;
  if (tokens.empty()) return out;
  for (std::size_t i = first; i <= last && i < tokens.size(); ++i) {
    if (!out.empty()) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocab::Vocab() {
  tokens_ = {kPadToken, kUnkToken, kBosToken, kSepToken};
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<std::int32_t>(i);
}

Vocab Vocab::build(const std::vector<Example>& train_split, std::size_t min_freq) {
  if (train_split.empty()) throw input_error("build_vocab: empty training split");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& ex : train_split) {
    for (const auto& tok : ex.content_tokens()) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (auto& [tok, freq] : ranked) {
    if (freq < min_freq) continue;
    if (v.index_.count(tok)) continue;
    v.index_[tok] = static_cast<std::int32_t>(v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 4 || tokens[0] != kPadToken || tokens[1] != kUnkToken ||
      tokens[2] != kBosToken || tokens[3] != kSepToken) {
    throw format_error("Vocab::from_tokens: reserved token prefix missing");
  }
  Vocab v;
  v.tokens_ = tokens;
  v.index_.clear();
  for (std::size_t i = 0; i < tokens.size(); ++i)
    v.index_[tokens[i]] = static_cast<std::int32_t>(i);
  return v;
}

std::int32_t Vocab::id_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw input_error("token id " + std::to_string(id) + " out of range for vocab of " +
                      std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> tokenize(const std::string& text, const Vocab& vocab) {
  auto toks = segment_text(text);
  if (toks.empty()) throw input_error("tokenize: empty text");
  std::vector<std::int32_t> ids;
  ids.reserve(toks.size() + 1);
  ids.push_back(kBosId);
  for (const auto& t : toks) ids.push_back(vocab.id_of(t));
  return ids;
}

std::vector<std::int32_t> tokenize_pair(const std::string& premise, const std::string& hypothesis,
                                        const Vocab& vocab) {
  auto p = segment_text(premise);
  auto h = segment_text(hypothesis);
  if (p.empty() || h.empty()) throw input_error("tokenize: empty text in pair");
  std::vector<std::int32_t> ids;
  ids.reserve(p.size() + h.size() + 2);
  ids.push_back(kBosId);
  for (const auto& t : p) ids.push_back(vocab.id_of(t));
  ids.push_back(kSepId);
  for (const auto& t : h) ids.push_back(vocab.id_of(t));
  return ids;
}

}  // namespace spanexplain
