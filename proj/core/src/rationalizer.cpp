#include "spanexplain/rationalizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "spanexplain/errors.hpp"
#include "spanexplain/reports.hpp"

namespace spanexplain {

std::string to_string(ExtractorKind kind) {
  switch (kind) {
    case ExtractorKind::self_explaining: return "self_explaining";
    case ExtractorKind::avg_gradient: return "avg_gradient";
    case ExtractorKind::avg_attention: return "avg_attention";
    case ExtractorKind::identity: return "identity";
    case ExtractorKind::random_span: return "random";
  }
  throw contract_error("unknown extractor kind");
}

ExtractorKind extractor_from_string(const std::string& name) {
  if (name == "self_explaining") return ExtractorKind::self_explaining;
  if (name == "avg_gradient") return ExtractorKind::avg_gradient;
  if (name == "avg_attention") return ExtractorKind::avg_attention;
  if (name == "identity") return ExtractorKind::identity;
  if (name == "random") return ExtractorKind::random_span;
  throw config_error("unknown extractor \"" + name +
                     "\" (self_explaining|avg_gradient|avg_attention|identity|random)");
}

bool extractor_needs_model(ExtractorKind kind) {
  return kind == ExtractorKind::self_explaining || kind == ExtractorKind::avg_gradient ||
         kind == ExtractorKind::avg_attention;
}

namespace {

// Tie rule shared by all extractors: higher score wins, then the shorter
// span, then the smaller start index.
bool beats(double score, const SpanIndex& span, double best_score, const SpanIndex& best) {
  if (score != best_score) return score > best_score;
  if (span.width() != best.width()) return span.width() < best.width();
  return span.start < best.start;
}

std::size_t best_span_index(const SpanTable& table, const std::vector<double>& scores) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < table.size(); ++k) {
    if (beats(scores[k], table[k], scores[best], table[best])) best = k;
  }
  return best;
}

RationaleRecord make_record(const Example& example, const std::vector<std::string>& tokens,
                            const Model& model, std::size_t predicted, SpanIndex span,
                            double score, const std::string& method) {
  RationaleRecord rec;
  rec.example_id = example.id;
  rec.span = span;
  rec.span_text = detokenize(tokens, span.start, span.end);
  rec.score = score;
  rec.method = method;
  rec.predicted_label = model.labels.label_of(predicted);
  rec.true_label = example.label;
  return rec;
}

std::vector<double> span_mean_scores(const SpanTable& table, const std::vector<double>& per_token) {
  std::vector<double> scores(table.size());
  for (std::size_t k = 0; k < table.size(); ++k) {
    double acc = 0.0;
    for (std::size_t t = table[k].start; t <= table[k].end; ++t) acc += per_token[t];
    scores[k] = acc / static_cast<double>(table[k].width());
  }
  return scores;
}

}  // namespace

RationaleRecord extract_top_span(const Model& model, const Example& example) {
  auto input = encode_example(example, model.vocab);
  auto result = forward(model, input);
  std::vector<double> scores(result.alpha.values().begin(), result.alpha.values().end());
  const std::size_t best = best_span_index(result.spans, scores);
  return make_record(example, input.content_tokens, model, argmax(result.probs),
                     result.spans[best], scores[best], "self_explaining");
}

std::vector<RationaleRecord> extract_spans_threshold(const Model& model, const Example& example,
                                                     std::optional<double> theta,
                                                     std::optional<std::size_t> top_k) {
  if (!theta && !top_k) {
    throw config_error("extract_spans_threshold: set a threshold, a span budget, or both");
  }
  if (theta && (*theta <= 0.0 || *theta > 1.0)) {
    throw config_error("extract_spans_threshold: threshold must be in (0, 1]");
  }
  if (top_k && *top_k < 1) {
    throw config_error("extract_spans_threshold: top_k must be >= 1");
  }

  auto input = encode_example(example, model.vocab);
  auto result = forward(model, input);
  const auto& alpha = result.alpha.values();
  const std::size_t predicted = argmax(result.probs);

  std::vector<std::size_t> ranked(result.spans.size());
  for (std::size_t k = 0; k < ranked.size(); ++k) ranked[k] = k;
  std::sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    return beats(alpha[a], result.spans[a], alpha[b], result.spans[b]);
  });

  std::vector<RationaleRecord> kept;
  for (std::size_t k : ranked) {
    if (theta && static_cast<double>(alpha[k]) < *theta) break;
    if (top_k && kept.size() >= *top_k) break;
    bool overlapping = false;
    for (const auto& r : kept) {
      if (r.span.overlaps(result.spans[k])) {
        overlapping = true;
        break;
      }
    }
    if (overlapping) continue;
    kept.push_back(make_record(example, input.content_tokens, model, predicted, result.spans[k],
                               alpha[k], "self_explaining"));
  }
  return kept;
}

std::vector<double> word_saliency(const Model& model, const Example& example,
                                  bool use_true_label) {
  auto input = encode_example(example, model.vocab);

  GradTape tape;
  auto result = forward(model, input);
  const std::size_t target = use_true_label ? model.labels.id_of(example.label)
                                            : argmax(result.probs);
  auto picked = select(result.probs, target);
  tape.backward(picked);

  const auto& grad = result.h0.grad();
  const std::size_t d = result.h0.cols();
  std::vector<double> saliency(input.content_positions.size(), 0.0);
  for (std::size_t t = 0; t < input.content_positions.size(); ++t) {
    const std::size_t pos = input.content_positions[t];
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += std::abs(static_cast<double>(grad[pos * d + j]));
    saliency[t] = acc;
  }
  return saliency;
}

RationaleRecord avg_gradient_span(const Model& model, const Example& example,
                                  bool use_true_label) {
  auto input = encode_example(example, model.vocab);
  auto saliency = word_saliency(model, example, use_true_label);
  auto table = enumerate_spans(saliency.size(), model.max_span_width);
  auto scores = span_mean_scores(table, saliency);
  const std::size_t best = best_span_index(table, scores);
  const std::size_t predicted = predict_label(model, example);
  return make_record(example, input.content_tokens, model, predicted, table[best], scores[best],
                     "avg_gradient");
}

RationaleRecord avg_attention_span(const Model& model, const Example& example) {
  auto input = encode_example(example, model.vocab);
  auto result = forward(model, input);
  auto profile = cls_attention_profile(result.encoder);

  std::vector<double> per_token(input.content_positions.size());
  for (std::size_t t = 0; t < input.content_positions.size(); ++t) {
    per_token[t] = static_cast<double>(profile[input.content_positions[t]]);
  }
  auto table = enumerate_spans(per_token.size(), model.max_span_width);
  auto scores = span_mean_scores(table, per_token);
  const std::size_t best = best_span_index(table, scores);
  return make_record(example, input.content_tokens, model, argmax(result.probs), table[best],
                     scores[best], "avg_attention");
}

std::size_t dump_errors(const Model& model, const Dataset& dataset, const std::string& out_path) {
  std::vector<RationaleRecord> records;
  for (const auto& ex : dataset) {
    const std::size_t want = model.labels.id_of(ex.label);
    auto record = extract_top_span(model, ex);
    if (model.labels.id_of(record.predicted_label) == want) continue;
    records.push_back(std::move(record));
  }
  save_rationale_records(out_path, records);
  return records.size();
}

DictionaryParaphraser::DictionaryParaphraser(
    std::map<std::string, std::vector<std::string>> lexicon)
    : lexicon_(std::move(lexicon)) {
  for (const auto& [key, candidates] : lexicon_) {
    if (key.empty()) throw config_error("paraphrase lexicon: empty key");
    for (const auto& c : candidates) {
      if (c.empty()) throw config_error("paraphrase lexicon: empty candidate for \"" + key + "\"");
    }
  }
}

DictionaryParaphraser DictionaryParaphraser::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open paraphrase lexicon: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error("paraphrase lexicon " + path + ": " + e.what());
  }
  if (!j.is_object()) throw format_error("paraphrase lexicon: expected a JSON object");
  std::map<std::string, std::vector<std::string>> lexicon;
  for (auto& [key, value] : j.items()) {
    lexicon[key] = value.get<std::vector<std::string>>();
  }
  return DictionaryParaphraser(std::move(lexicon));
}

std::vector<std::string> DictionaryParaphraser::paraphrase(const std::string& text) {
  const std::string normalized = detokenize(segment_text(text));
  if (auto it = lexicon_.find(normalized); it != lexicon_.end() && !it->second.empty()) {
    return it->second;
  }

  // No exact entry: substitute the longest lexicon key appearing inside the
  // text at a token boundary.
  const auto tokens = segment_text(text);
  std::size_t best_len = 0;
  std::size_t best_at = 0;
  const std::vector<std::string>* best_candidates = nullptr;
  for (const auto& [key, candidates] : lexicon_) {
    if (candidates.empty()) continue;
    const auto key_tokens = segment_text(key);
    if (key_tokens.empty() || key_tokens.size() > tokens.size()) continue;
    for (std::size_t at = 0; at + key_tokens.size() <= tokens.size(); ++at) {
      if (std::equal(key_tokens.begin(), key_tokens.end(), tokens.begin() + at) &&
          key_tokens.size() > best_len) {
        best_len = key_tokens.size();
        best_at = at;
        best_candidates = &candidates;
      }
    }
  }
  if (best_candidates == nullptr) return {text};  // identity fallback

  std::vector<std::string> out;
  out.reserve(best_candidates->size());
  for (const auto& replacement : *best_candidates) {
    std::vector<std::string> rebuilt(tokens.begin(), tokens.begin() + best_at);
    for (const auto& t : segment_text(replacement)) rebuilt.push_back(t);
    rebuilt.insert(rebuilt.end(), tokens.begin() + best_at + best_len, tokens.end());
    out.push_back(detokenize(rebuilt));
  }
  return out;
}

namespace {

// Rebuild an example with the content tokens of [span] replaced by the
// candidate's tokens. For pairs the replacement lands on the side(s) the
// span covers, with a crossing span folding the candidate into the premise.
Example substitute_span(const Example& example, const std::vector<std::string>& tokens,
                        SpanIndex span, const std::string& replacement) {
  std::vector<std::string> rebuilt(tokens.begin(), tokens.begin() + span.start);
  const auto replacement_tokens = segment_text(replacement);
  rebuilt.insert(rebuilt.end(), replacement_tokens.begin(), replacement_tokens.end());
  rebuilt.insert(rebuilt.end(), tokens.begin() + span.end + 1, tokens.end());

  Example mutated = example;
  if (!example.is_pair) {
    mutated.text = detokenize(rebuilt);
  } else {
    const std::size_t premise_len = example.premise_token_count();
    std::size_t split = premise_len;
    if (span.start >= premise_len) {
      split = premise_len;  // replacement entirely in the hypothesis
    } else {
      // Premise side absorbs the replacement (covers crossing spans too).
      const std::size_t removed_from_premise = std::min(span.end + 1, premise_len) - span.start;
      split = premise_len - removed_from_premise + replacement_tokens.size();
    }
    split = std::min(split, rebuilt.size() - 1);
    split = std::max<std::size_t>(split, 1);
    mutated.premise = detokenize({rebuilt.begin(), rebuilt.begin() + split});
    mutated.hypothesis = detokenize({rebuilt.begin() + split, rebuilt.end()});
  }
  mutated.gold_span.reset();
  return mutated;
}

}  // namespace

AttackResult adversarial_attack(const Model& model, const Example& example,
                                Paraphraser& paraphraser, std::size_t max_candidates) {
  auto input = encode_example(example, model.vocab);
  auto record = extract_top_span(model, example);

  AttackResult result;
  result.example_id = example.id;
  result.original_text = example.is_pair ? example.premise + " / " + example.hypothesis
                                         : example.text;
  result.attacked_span = record.span;
  result.span_text = record.span_text;
  result.original_label = record.predicted_label;
  result.new_label = record.predicted_label;
  result.success = false;
  if (max_candidates == 0) return result;

  std::vector<std::string> candidates;
  try {
    candidates = paraphraser.paraphrase(record.span_text);
  } catch (const std::exception& e) {
    throw attack_error("paraphraser failed on \"" + record.span_text + "\": " + e.what());
  }
  for (const auto& c : candidates) {
    if (c.empty()) throw attack_error("paraphraser returned an empty candidate");
  }
  if (candidates.size() > max_candidates) candidates.resize(max_candidates);

  const std::size_t original = model.labels.id_of(record.predicted_label);
  for (const auto& candidate : candidates) {
    result.candidates.push_back(candidate);
    Example mutated = substitute_span(example, input.content_tokens, record.span, candidate);
    const std::size_t relabeled = predict_label(model, mutated);
    if (relabeled != original) {
      result.chosen = candidate;
      result.attacked_text = mutated.is_pair ? mutated.premise + " / " + mutated.hypothesis
                                             : mutated.text;
      result.new_label = model.labels.label_of(relabeled);
      result.success = true;
      break;
    }
  }
  return result;
}

}  // namespace spanexplain
