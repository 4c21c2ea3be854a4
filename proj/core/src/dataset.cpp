#include "spanexplain/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "spanexplain/errors.hpp"
#include "spanexplain/vocab.hpp"

namespace spanexplain {

namespace {

using ordered_json = nlohmann::ordered_json;

[[noreturn]] void line_error(const std::string& path, std::size_t line, const std::string& what) {
  throw input_error(path + ":" + std::to_string(line) + ": " + what);
}

std::string string_field(const nlohmann::json& obj, const char* key, const std::string& path,
                         std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) line_error(path, line, std::string("missing field \"") + key + "\"");
  if (!it->is_string()) line_error(path, line, std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

std::vector<std::string> Example::content_tokens() const {
  if (!is_pair) return segment_text(text);
  auto toks = segment_text(premise);
  auto h = segment_text(hypothesis);
  toks.insert(toks.end(), h.begin(), h.end());
  return toks;
}

std::size_t Example::premise_token_count() const {
  return is_pair ? segment_text(premise).size() : 0;
}

LabelMap LabelMap::build(const Dataset& train_split) {
  if (train_split.empty()) throw input_error("LabelMap::build: empty training split");
  std::map<std::string, std::size_t> index;
  for (const auto& ex : train_split) index.emplace(ex.label, 0);
  LabelMap m;
  for (auto& [label, idx] : index) {
    idx = m.labels_.size();
    m.labels_.push_back(label);
  }
  m.index_ = std::move(index);
  return m;
}

LabelMap LabelMap::from_labels(std::vector<std::string> labels) {
  LabelMap m;
  m.labels_ = std::move(labels);
  for (std::size_t i = 0; i < m.labels_.size(); ++i) m.index_[m.labels_[i]] = i;
  return m;
}

std::size_t LabelMap::id_of(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) throw input_error("unknown label \"" + label + "\"");
  return it->second;
}

bool LabelMap::contains(const std::string& label) const { return index_.count(label) != 0; }

const std::string& LabelMap::label_of(std::size_t id) const {
  if (id >= labels_.size()) {
    throw contract_error("label id " + std::to_string(id) + " out of range");
  }
  return labels_[id];
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open dataset file: " + path);
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      line_error(path, line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) line_error(path, line_no, "expected a JSON object");

    Example ex;
    if (obj.contains("premise") || obj.contains("hypothesis")) {
      ex.is_pair = true;
      ex.premise = string_field(obj, "premise", path, line_no);
      ex.hypothesis = string_field(obj, "hypothesis", path, line_no);
      if (segment_text(ex.premise).empty() || segment_text(ex.hypothesis).empty()) {
        line_error(path, line_no, "empty premise or hypothesis");
      }
    } else {
      ex.text = string_field(obj, "text", path, line_no);
      if (segment_text(ex.text).empty()) line_error(path, line_no, "empty text");
    }
    ex.label = string_field(obj, "label", path, line_no);

    if (auto it = obj.find("id"); it != obj.end()) {
      if (it->is_string()) {
        ex.id = it->get<std::string>();
      } else if (it->is_number_integer()) {
        ex.id = std::to_string(it->get<long long>());
      } else {
        line_error(path, line_no, "field \"id\" must be a string or integer");
      }
    } else {
      ex.id = std::to_string(line_no);
    }

    if (auto it = obj.find("gold_span"); it != obj.end()) {
      if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number_integer() ||
          !(*it)[1].is_number_integer()) {
        line_error(path, line_no, "field \"gold_span\" must be [start, end]");
      }
      const long long i = (*it)[0].get<long long>();
      const long long j = (*it)[1].get<long long>();
      const std::size_t n = ex.content_tokens().size();
      if (i < 0 || j < i || static_cast<std::size_t>(j) >= n) {
        line_error(path, line_no,
                   "gold_span [" + std::to_string(i) + ", " + std::to_string(j) +
                       "] out of range for " + std::to_string(n) + " tokens");
      }
      ex.gold_span = {static_cast<std::size_t>(i), static_cast<std::size_t>(j)};
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write dataset file: " + path);
  for (const auto& ex : dataset) {
    ordered_json obj;
    obj["id"] = ex.id;
    if (ex.is_pair) {
      obj["premise"] = ex.premise;
      obj["hypothesis"] = ex.hypothesis;
    } else {
      obj["text"] = ex.text;
    }
    obj["label"] = ex.label;
    if (ex.gold_span) {
      obj["gold_span"] = {ex.gold_span->first, ex.gold_span->second};
    }
    out << obj.dump() << '\n';
  }
  if (!out) throw input_error("failed writing dataset file: " + path);
}

DataSplits load_splits(const std::string& dir) {
  namespace fs = std::filesystem;
  DataSplits s;
  s.train = load_dataset((fs::path(dir) / "train.jsonl").string());
  s.dev = load_dataset((fs::path(dir) / "dev.jsonl").string());
  s.test = load_dataset((fs::path(dir) / "test.jsonl").string());
  return s;
}

void save_splits(const std::string& dir, const DataSplits& splits) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_dataset((fs::path(dir) / "train.jsonl").string(), splits.train);
  save_dataset((fs::path(dir) / "dev.jsonl").string(), splits.dev);
  save_dataset((fs::path(dir) / "test.jsonl").string(), splits.test);
}

}  // namespace spanexplain
