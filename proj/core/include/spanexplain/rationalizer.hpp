#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spanexplain/model.hpp"
#include "spanexplain/trainer.hpp"

namespace spanexplain {

enum class ExtractorKind {
  self_explaining,
  avg_gradient,
  avg_attention,
  identity,     // full-sequence span; protocol soundness control
  random_span,  // seeded random span; quality control baseline
};

std::string to_string(ExtractorKind kind);
ExtractorKind extractor_from_string(const std::string& name);
bool extractor_needs_model(ExtractorKind kind);

struct RationaleRecord {
  std::string example_id;
  SpanIndex span;
  std::string span_text;
  double score = 0.0;
  std::string method;
  std::string predicted_label;
  std::string true_label;
};

// Highest-α span. Ties break to the shorter span, then the smaller start.
RationaleRecord extract_top_span(const Model& model, const Example& example);

// Rank spans by descending α, greedily keep spans that do not overlap an
// already kept span, stop below the threshold or at top_k. At least one of
// theta / top_k must be given.
std::vector<RationaleRecord> extract_spans_threshold(const Model& model, const Example& example,
                                                     std::optional<double> theta,
                                                     std::optional<std::size_t> top_k);

// Per-word saliency: L1 norm of ∂p(target)/∂(word embedding vector) at each
// content token. target is the predicted label unless use_true_label is set.
std::vector<double> word_saliency(const Model& model, const Example& example,
                                  bool use_true_label = false);

// Highest mean-word-saliency span (same tie rule).
RationaleRecord avg_gradient_span(const Model& model, const Example& example,
                                  bool use_true_label = false);

// Highest mean BOS-attention span (same tie rule).
RationaleRecord avg_attention_span(const Model& model, const Example& example);

// One record per misclassified example, written as JSON lines. Returns the
// record count.
std::size_t dump_errors(const Model& model, const Dataset& dataset, const std::string& out_path);

// Candidate generator for span replacement. Implementations must be
// deterministic for a fixed seed and return non-empty candidate strings.
class Paraphraser {
 public:
  virtual ~Paraphraser() = default;
  virtual std::vector<std::string> paraphrase(const std::string& text) = 0;
};

// Returns the input unchanged; a paraphrase source that can never flip.
class IdentityParaphraser : public Paraphraser {
 public:
  std::vector<std::string> paraphrase(const std::string& text) override { return {text}; }
};

// Phrase-substitution paraphraser over a fixed lexicon. Exact (token
// normalized) matches are used first; otherwise the longest lexicon key
// contained in the text is substituted in place. Falls back to the identity
// paraphrase when nothing matches.
class DictionaryParaphraser : public Paraphraser {
 public:
  explicit DictionaryParaphraser(std::map<std::string, std::vector<std::string>> lexicon);
  static DictionaryParaphraser from_file(const std::string& path);

  std::vector<std::string> paraphrase(const std::string& text) override;

 private:
  std::map<std::string, std::vector<std::string>> lexicon_;
};

struct AttackResult {
  std::string example_id;
  std::string original_text;
  SpanIndex attacked_span;
  std::string span_text;
  std::vector<std::string> candidates;  // everything tried
  std::optional<std::string> chosen;    // the flipping paraphrase
  std::optional<std::string> attacked_text;
  std::string original_label;  // model's prediction on the original
  std::string new_label;       // prediction after the attack
  bool success = false;        // success == (new_label != original_label)
};

// Replace the top-α span with paraphrase candidates until one flips the
// predicted label. The input example is never mutated.
AttackResult adversarial_attack(const Model& model, const Example& example,
                                Paraphraser& paraphraser, std::size_t max_candidates);

}  // namespace spanexplain
