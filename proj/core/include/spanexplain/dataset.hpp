#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace spanexplain {

// One labeled instance: a single text or a premise-hypothesis pair, with an
// optional gold rationale given as an inclusive token interval over the
// content tokens (special tokens excluded).
class Example {
 public:
  std::string id;
  std::string text;
  std::string premise;
  std::string hypothesis;
  bool is_pair = false;
  std::string label;
  std::optional<std::pair<std::size_t, std::size_t>> gold_span;

  // Segmented content tokens: text, or premise followed by hypothesis.
  std::vector<std::string> content_tokens() const;
  // Content tokens of the premise alone (pair inputs only).
  std::size_t premise_token_count() const;
};

using Dataset = std::vector<Example>;

struct DataSplits {
  Dataset train;
  Dataset dev;
  Dataset test;
};

// String label <-> dense index mapping, deterministic (lexicographic).
class LabelMap {
 public:
  LabelMap() = default;
  static LabelMap build(const Dataset& train_split);
  static LabelMap from_labels(std::vector<std::string> labels);

  std::size_t id_of(const std::string& label) const;  // throws input_error
  bool contains(const std::string& label) const;
  const std::string& label_of(std::size_t id) const;
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

  bool operator==(const LabelMap& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::map<std::string, std::size_t> index_;
};

// JSON-lines loading; parse errors carry the 1-based line number. Objects are
// {"text", "label"} or {"premise", "hypothesis", "label"}, with optional
// "id" and "gold_span": [i, j] validated against the tokenized length.
Dataset load_dataset(const std::string& path);
void save_dataset(const std::string& path, const Dataset& dataset);

// Loads train.jsonl / dev.jsonl / test.jsonl from a directory.
DataSplits load_splits(const std::string& dir);
void save_splits(const std::string& dir, const DataSplits& splits);

}  // namespace spanexplain
