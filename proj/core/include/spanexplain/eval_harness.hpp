#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spanexplain/rationalizer.hpp"

namespace spanexplain {

// ---------------------------------------------------------------------------
// Planted-rationale synthetic task
// ---------------------------------------------------------------------------

// Each example is filler tokens around one class-determining signal phrase;
// with the configured probability the phrase is preceded by a negation
// wrapper and the label flips to the class's counterpart. The gold rationale
// covers the phrase plus the wrapper when present.
struct SynthConfig {
  std::size_t classes = 2;
  std::vector<std::string> class_labels;               // empty = defaults
  std::vector<std::vector<std::string>> phrases;       // per class, empty = defaults
  std::size_t filler_vocab = 40;
  std::size_t min_len = 8;   // total content tokens, phrase included
  std::size_t max_len = 16;
  double negation_prob = 0.3;
  std::string negation_token = "not";
  std::uint64_t seed = 1;
  std::size_t train_size = 1000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;

  void validate() const;
  static SynthConfig defaults();
};

struct SynthData {
  DataSplits splits;
  // Span text -> candidate replacements that flip the label under the
  // generator's labeling rule.
  std::map<std::string, std::vector<std::string>> paraphrase_lexicon;
  SynthConfig config;
};

SynthData synth_generate(const SynthConfig& config);

void save_lexicon(const std::string& path,
                  const std::map<std::string, std::vector<std::string>>& lexicon);
std::map<std::string, std::vector<std::string>> load_lexicon(const std::string& path);

// ---------------------------------------------------------------------------
// Rationale-substituted datasets and the three faithfulness protocols
// ---------------------------------------------------------------------------

struct SpanDatasetInfo {
  Dataset examples;
  std::string extractor;
  std::string source_split;
  std::size_t empty_fallbacks = 0;   // extractions that fell back to full text
  double compression_ratio = 1.0;    // mean extracted tokens / mean source tokens
};

// Replace every text with its extracted top-span text, labels unchanged.
// model may be null for extractors that do not need one.
SpanDatasetInfo build_span_dataset(ExtractorKind extractor, const Model* model,
                                   const Dataset& split, const std::string& split_name,
                                   std::uint64_t random_seed = 0);

struct FaithfulnessReport {
  std::string extractor;
  double full_train_span_test = 0.0;
  double span_train_full_test = 0.0;
  double span_train_span_test = 0.0;
  double compression_ratio = 1.0;
  std::uint64_t root_seed = 0;
  std::vector<std::uint64_t> setting_seeds;  // F-S, S-F, S-S
};

// Seed used for the k-th protocol setting (0 = F-S, 1 = S-F, 2 = S-S).
std::uint64_t protocol_setting_seed(std::uint64_t root_seed, std::size_t setting_index);

// Runs FullTrain-SpanTest, SpanTrain-FullTest and SpanTrain-SpanTest with a
// fresh model per setting. The rationale extractor (when model-based) is
// trained on the full training split with the root seed.
FaithfulnessReport run_protocols(const DataSplits& full, ExtractorKind extractor,
                                 const EncoderConfig& encoder_config, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Span-match metrics (ERASER-style IOU F1 at 0.5 and macro token F1)
// ---------------------------------------------------------------------------

struct SpanMatchScores {
  double iou_precision = 0.0;
  double iou_recall = 0.0;
  double iou_f1 = 0.0;
  double token_precision = 0.0;
  double token_recall = 0.0;
  double token_f1 = 0.0;
};

SpanMatchScores span_match_metrics(const std::vector<std::vector<SpanIndex>>& predicted,
                                   const std::vector<std::vector<SpanIndex>>& gold);

// ---------------------------------------------------------------------------
// λ sweep
// ---------------------------------------------------------------------------

struct SweepPoint {
  double lambda = 0.0;
  double dev_accuracy = 0.0;
  double mean_sharpness = 0.0;
};

// One training per λ with a shared seed; sharpness and accuracy are measured
// on the dev split at the selected checkpoint.
std::vector<SweepPoint> lambda_sweep(const std::vector<double>& values, const DataSplits& data,
                                     const EncoderConfig& encoder_config,
                                     const TrainConfig& base_config);

// Spearman rank correlation; average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Factorized vs reference span-kernel timing
// ---------------------------------------------------------------------------

struct BenchRow {
  std::size_t n = 0;
  std::size_t d = 0;
  double factorized_seconds = 0.0;
  double reference_seconds = 0.0;
  double ratio = 0.0;  // reference / factorized
};

// Times build_all_spans against per-span reference evaluation over the grid.
// The reference route is O(N²D²) against the factorized O(N²D), so the ratio
// grows roughly linearly in D.
std::vector<BenchRow> complexity_benchmark(const std::vector<std::size_t>& n_values,
                                           const std::vector<std::size_t>& d_values,
                                           std::uint64_t seed = 1);

// True when, for every N in the grid, the reference/factorized ratio is
// strictly increasing across the D values.
bool ratio_monotone_in_d(const std::vector<BenchRow>& rows);

}  // namespace spanexplain
