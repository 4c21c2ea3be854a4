#include <algorithm>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "spanexplain/errors.hpp"
#include "spanexplain/eval_harness.hpp"
#include "spanexplain/vocab.hpp"

namespace spanexplain {

namespace {

const std::vector<std::string> kDefaultLabels = {"neg", "pos"};

const std::vector<std::vector<std::string>> kDefaultPhrases = {
    // neg
    {"utterly dreadful mess", "thoroughly boring film", "painfully awful story"},
    // pos
    {"truly wonderful gem", "thoroughly charming film", "really delightful story"},
};

std::size_t longest_phrase_tokens(const SynthConfig& cfg) {
  std::size_t longest = 0;
  for (const auto& inventory : cfg.phrases) {
    for (const auto& phrase : inventory) {
      longest = std::max(longest, segment_text(phrase).size());
    }
  }
  return longest;
}

}  // namespace

SynthConfig SynthConfig::defaults() {
  SynthConfig cfg;
  cfg.class_labels = kDefaultLabels;
  cfg.phrases = kDefaultPhrases;
  return cfg;
}

void SynthConfig::validate() const {
  if (classes < 2) throw config_error("synth config: need at least 2 classes");
  if (class_labels.size() != classes) {
    throw config_error("synth config: " + std::to_string(class_labels.size()) +
                       " labels for " + std::to_string(classes) + " classes");
  }
  if (phrases.size() != classes) {
    throw config_error("synth config: " + std::to_string(phrases.size()) +
                       " phrase inventories for " + std::to_string(classes) + " classes");
  }
  std::set<std::string> seen;
  for (const auto& inventory : phrases) {
    if (inventory.empty()) throw config_error("synth config: empty phrase inventory");
    for (const auto& phrase : inventory) {
      const auto toks = segment_text(phrase);
      if (toks.empty()) throw config_error("synth config: empty signal phrase");
      if (!seen.insert(detokenize(toks)).second) {
        throw config_error("synth config: phrase \"" + phrase +
                           "\" appears in more than one class inventory");
      }
    }
  }
  if (filler_vocab == 0) throw config_error("synth config: filler vocabulary must be non-empty");
  if (negation_prob < 0.0 || negation_prob > 1.0) {
    throw config_error("synth config: negation probability must be in [0, 1]");
  }
  // The wrapper consumes one slot, and at least two fillers keep the gold
  // span strictly inside the text for every draw.
  const std::size_t needed = longest_phrase_tokens(*this) + 1 + 2;
  if (min_len < needed || max_len < min_len) {
    throw config_error("synth config: length range [" + std::to_string(min_len) + ", " +
                       std::to_string(max_len) + "] too small; need at least " +
                       std::to_string(needed) + " tokens");
  }
  if (train_size == 0 || dev_size == 0 || test_size == 0) {
    throw config_error("synth config: all split sizes must be positive");
  }
}

SynthData synth_generate(const SynthConfig& user_config) {
  SynthConfig cfg = user_config;
  if (cfg.class_labels.empty()) cfg.class_labels = SynthConfig::defaults().class_labels;
  if (cfg.phrases.empty()) cfg.phrases = SynthConfig::defaults().phrases;
  cfg.validate();

  std::vector<std::string> fillers(cfg.filler_vocab);
  for (std::size_t i = 0; i < cfg.filler_vocab; ++i) {
    std::string name = std::to_string(i);
    while (name.size() < 2) name.insert(name.begin(), '0');
    fillers[i] = "f" + name;
  }

  auto counterpart = [&](std::size_t c) { return (c + 1) % cfg.classes; };

  SynthData data;
  data.config = cfg;

  std::set<std::string> seen_texts;
  const char* split_names[] = {"train", "dev", "test"};
  const std::size_t split_sizes[] = {cfg.train_size, cfg.dev_size, cfg.test_size};
  Dataset* split_out[] = {&data.splits.train, &data.splits.dev, &data.splits.test};

  for (std::size_t s = 0; s < 3; ++s) {
    Rng rng(derive_seed(cfg.seed, 100 + s));
    for (std::size_t n = 0; n < split_sizes[s]; ++n) {
      Example ex;
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt > 1000) {
          throw contract_error("synth_generate: cannot draw a fresh example; "
                               "increase lengths or the filler vocabulary");
        }
        const std::size_t cls = rng.index(cfg.classes);
        const auto& inventory = cfg.phrases[cls];
        const auto phrase_tokens =
            segment_text(inventory[rng.index(inventory.size())]);
        const bool wrapped = rng.bernoulli(cfg.negation_prob);
        const std::size_t label_class = wrapped ? counterpart(cls) : cls;

        std::vector<std::string> signal;
        if (wrapped) signal.push_back(cfg.negation_token);
        signal.insert(signal.end(), phrase_tokens.begin(), phrase_tokens.end());

        const std::size_t total = cfg.min_len + rng.index(cfg.max_len - cfg.min_len + 1);
        const std::size_t filler_count = total - signal.size();
        const std::size_t insert_at = rng.index(filler_count + 1);

        std::vector<std::string> tokens;
        tokens.reserve(total);
        for (std::size_t i = 0; i < insert_at; ++i) tokens.push_back(fillers[rng.index(fillers.size())]);
        const std::size_t span_start = tokens.size();
        tokens.insert(tokens.end(), signal.begin(), signal.end());
        const std::size_t span_end = tokens.size() - 1;
        for (std::size_t i = insert_at; i < filler_count; ++i) {
          tokens.push_back(fillers[rng.index(fillers.size())]);
        }

        const std::string text = detokenize(tokens);
        if (!seen_texts.insert(text).second) continue;  // keep splits disjoint

        ex.id = std::string(split_names[s]) + "-" + std::to_string(n);
        ex.text = text;
        ex.label = cfg.class_labels[label_class];
        ex.gold_span = {span_start, span_end};
        break;
      }
      split_out[s]->push_back(std::move(ex));
    }
  }

  // A generator-derived attack lexicon: every signal phrase (wrapped or not)
  // maps to the counterpart class's phrases, each of which flips the label
  // under the generation rule.
  for (std::size_t cls = 0; cls < cfg.classes; ++cls) {
    const auto& others = cfg.phrases[counterpart(cls)];
    for (const auto& phrase : cfg.phrases[cls]) {
      const std::string key = detokenize(segment_text(phrase));
      std::vector<std::string> plain, wrapped;
      for (const auto& other : others) {
        const std::string normalized = detokenize(segment_text(other));
        plain.push_back(normalized);
        wrapped.push_back(cfg.negation_token + " " + normalized);
      }
      data.paraphrase_lexicon[key] = plain;
      data.paraphrase_lexicon[cfg.negation_token + " " + key] = wrapped;
    }
  }
  return data;
}

void save_lexicon(const std::string& path,
                  const std::map<std::string, std::vector<std::string>>& lexicon) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write lexicon file: " + path);
  nlohmann::ordered_json j;
  for (const auto& [key, candidates] : lexicon) j[key] = candidates;
  out << j.dump(2) << '\n';
  if (!out) throw input_error("failed writing lexicon file: " + path);
}

std::map<std::string, std::vector<std::string>> load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open lexicon file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error("lexicon " + path + ": " + e.what());
  }
  std::map<std::string, std::vector<std::string>> lexicon;
  for (auto& [key, value] : j.items()) lexicon[key] = value.get<std::vector<std::string>>();
  return lexicon;
}

}  // namespace spanexplain
