#include "spanexplain/eval_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "spanexplain/errors.hpp"

namespace spanexplain {

namespace {

SpanIndex full_span(std::size_t token_count) { return {0, token_count - 1}; }

SpanIndex random_span(std::size_t token_count, Rng& rng) {
  const auto table = enumerate_spans(token_count);
  return table[rng.index(table.size())];
}

// Substitute the extracted span text back into the example, per side for
// pair inputs (a side with no overlap keeps its original text).
Example substitute_rationale(const Example& source, SpanIndex span) {
  Example out = source;
  out.gold_span.reset();
  const auto tokens = source.content_tokens();
  if (!source.is_pair) {
    out.text = detokenize(tokens, span.start, span.end);
    return out;
  }
  const std::size_t premise_len = source.premise_token_count();
  if (span.start < premise_len) {
    out.premise = detokenize(tokens, span.start, std::min(span.end, premise_len - 1));
  }
  if (span.end >= premise_len) {
    out.hypothesis = detokenize(tokens, std::max(span.start, premise_len), span.end);
  }
  return out;
}

}  // namespace

SpanDatasetInfo build_span_dataset(ExtractorKind extractor, const Model* model,
                                   const Dataset& split, const std::string& split_name,
                                   std::uint64_t random_seed) {
  if (extractor_needs_model(extractor) && model == nullptr) {
    throw config_error("build_span_dataset: extractor " + to_string(extractor) +
                       " needs a trained model");
  }
  SpanDatasetInfo info;
  info.extractor = to_string(extractor);
  info.source_split = split_name;
  info.examples.reserve(split.size());

  std::size_t source_tokens = 0;
  std::size_t extracted_tokens = 0;
  for (std::size_t idx = 0; idx < split.size(); ++idx) {
    const Example& ex = split[idx];
    const std::size_t n = ex.content_tokens().size();
    SpanIndex span;
    switch (extractor) {
      case ExtractorKind::self_explaining:
        span = extract_top_span(*model, ex).span;
        break;
      case ExtractorKind::avg_gradient:
        // Faithfulness evaluation differentiates the ground-truth label's
        // probability.
        span = avg_gradient_span(*model, ex, /*use_true_label=*/true).span;
        break;
      case ExtractorKind::avg_attention:
        span = avg_attention_span(*model, ex).span;
        break;
      case ExtractorKind::identity:
        span = full_span(n);
        break;
      case ExtractorKind::random_span: {
        Rng rng(derive_seed(random_seed, idx));
        span = random_span(n, rng);
        break;
      }
    }
    Example derived = substitute_rationale(ex, span);
    if (derived.content_tokens().empty()) {
      derived = ex;
      derived.gold_span.reset();
      ++info.empty_fallbacks;
      extracted_tokens += n;
    } else {
      extracted_tokens += span.width();
    }
    source_tokens += n;
    info.examples.push_back(std::move(derived));
  }
  info.compression_ratio =
      source_tokens == 0 ? 1.0
                         : static_cast<double>(extracted_tokens) / static_cast<double>(source_tokens);
  return info;
}

std::uint64_t protocol_setting_seed(std::uint64_t root_seed, std::size_t setting_index) {
  return root_seed + setting_index;
}

FaithfulnessReport run_protocols(const DataSplits& full, ExtractorKind extractor,
                                 const EncoderConfig& encoder_config, const TrainConfig& config) {
  FaithfulnessReport report;
  report.extractor = to_string(extractor);
  report.root_seed = config.seed;

  Model extractor_model;
  const Model* model = nullptr;
  if (extractor_needs_model(extractor)) {
    try {
      extractor_model = train(full.train, full.dev, encoder_config, config).model;
    } catch (const std::exception& e) {
      throw training_error(std::string("rationale-extractor training failed: ") + e.what());
    }
    model = &extractor_model;
  }

  auto primed_train =
      build_span_dataset(extractor, model, full.train, "train", derive_seed(config.seed, 201));
  auto primed_dev =
      build_span_dataset(extractor, model, full.dev, "dev", derive_seed(config.seed, 202));
  auto primed_test =
      build_span_dataset(extractor, model, full.test, "test", derive_seed(config.seed, 203));

  const std::size_t total_source = full.train.size() + full.dev.size() + full.test.size();
  report.compression_ratio =
      (primed_train.compression_ratio * full.train.size() +
       primed_dev.compression_ratio * full.dev.size() +
       primed_test.compression_ratio * full.test.size()) /
      static_cast<double>(total_source);

  struct Setting {
    const char* name;
    const Dataset* train_split;
    const Dataset* dev_split;
    const Dataset* test_split;
    double* out;
  };
  const Setting settings[] = {
      {"FullTrain-SpanTest", &full.train, &full.dev, &primed_test.examples,
       &report.full_train_span_test},
      {"SpanTrain-FullTest", &primed_train.examples, &primed_dev.examples, &full.test,
       &report.span_train_full_test},
      {"SpanTrain-SpanTest", &primed_train.examples, &primed_dev.examples, &primed_test.examples,
       &report.span_train_span_test},
  };
  for (std::size_t k = 0; k < 3; ++k) {
    TrainConfig setting_config = config;
    setting_config.seed = protocol_setting_seed(config.seed, k);
    report.setting_seeds.push_back(setting_config.seed);
    try {
      auto result = train(*settings[k].train_split, *settings[k].dev_split, encoder_config,
                          setting_config);
      *settings[k].out = evaluate_accuracy(result.model, *settings[k].test_split);
    } catch (const std::exception& e) {
      throw training_error(std::string(settings[k].name) + " setting failed: " + e.what());
    }
  }
  return report;
}

SpanMatchScores span_match_metrics(const std::vector<std::vector<SpanIndex>>& predicted,
                                   const std::vector<std::vector<SpanIndex>>& gold) {
  if (predicted.size() != gold.size()) {
    throw input_error("span_match_metrics: " + std::to_string(predicted.size()) +
                      " predicted lists vs " + std::to_string(gold.size()) + " gold lists");
  }

  const auto iou = [](const SpanIndex& a, const SpanIndex& b) {
    const std::size_t lo = std::max(a.start, b.start);
    const std::size_t hi = std::min(a.end, b.end);
    const double inter = hi >= lo ? static_cast<double>(hi - lo + 1) : 0.0;
    const double uni = static_cast<double>(std::max(a.end, b.end) - std::min(a.start, b.start) + 1);
    return inter / uni;
  };

  std::size_t pred_total = 0, gold_total = 0, pred_hits = 0, gold_hits = 0;
  double token_p_sum = 0.0, token_r_sum = 0.0, token_f_sum = 0.0;
  std::size_t examples = 0;

  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& pred = predicted[i];
    const auto& ref = gold[i];
    pred_total += pred.size();
    gold_total += ref.size();
    for (const auto& p : pred) {
      for (const auto& g : ref) {
        if (iou(p, g) >= 0.5) {
          ++pred_hits;
          break;
        }
      }
    }
    for (const auto& g : ref) {
      for (const auto& p : pred) {
        if (iou(p, g) >= 0.5) {
          ++gold_hits;
          break;
        }
      }
    }

    // Macro token F1 over covered-position sets.
    auto cover = [](const std::vector<SpanIndex>& spans) {
      std::vector<std::size_t> positions;
      for (const auto& s : spans)
        for (std::size_t t = s.start; t <= s.end; ++t) positions.push_back(t);
      std::sort(positions.begin(), positions.end());
      positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
      return positions;
    };
    const auto pc = cover(pred);
    const auto gc = cover(ref);
    std::vector<std::size_t> inter;
    std::set_intersection(pc.begin(), pc.end(), gc.begin(), gc.end(), std::back_inserter(inter));
    const double p = pc.empty() ? 0.0 : static_cast<double>(inter.size()) / pc.size();
    const double r = gc.empty() ? 0.0 : static_cast<double>(inter.size()) / gc.size();
    token_p_sum += p;
    token_r_sum += r;
    token_f_sum += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    ++examples;
  }

  SpanMatchScores scores;
  scores.iou_precision = pred_total ? static_cast<double>(pred_hits) / pred_total : 0.0;
  scores.iou_recall = gold_total ? static_cast<double>(gold_hits) / gold_total : 0.0;
  scores.iou_f1 = (scores.iou_precision + scores.iou_recall) > 0.0
                      ? 2.0 * scores.iou_precision * scores.iou_recall /
                            (scores.iou_precision + scores.iou_recall)
                      : 0.0;
  if (examples > 0) {
    scores.token_precision = token_p_sum / examples;
    scores.token_recall = token_r_sum / examples;
    scores.token_f1 = token_f_sum / examples;
  }
  return scores;
}

std::vector<SweepPoint> lambda_sweep(const std::vector<double>& values, const DataSplits& data,
                                     const EncoderConfig& encoder_config,
                                     const TrainConfig& base_config) {
  if (values.empty()) throw config_error("lambda_sweep: no lambda values given");
  for (double v : values) {
    if (v < 0.0) throw config_error("lambda_sweep: lambda must be >= 0, got " + std::to_string(v));
  }
  std::vector<SweepPoint> curve;
  curve.reserve(values.size());
  for (double v : values) {
    TrainConfig cfg = base_config;
    cfg.lambda = v;
    auto result = train(data.train, data.dev, encoder_config, cfg);
    const auto& best = result.history.epochs[result.history.best_epoch];
    curve.push_back({v, best.dev_accuracy, best.dev_mean_sharpness});
  }
  return curve;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw input_error("spearman: need two equally sized series of length >= 2");
  }
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> rank(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    return rank;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double mean = (n + 1.0) / 2.0;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

namespace {

// Times a callable, growing the repetition count until the sample is long
// enough to trust, then keeps the best of three samples.
template <typename F>
double time_per_call(F&& fn) {
  using clock = std::chrono::steady_clock;
  constexpr double kMinSample = 0.02;
  std::size_t reps = 1;
  for (;;) {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < reps; ++i) fn();
    const double elapsed = std::chrono::duration<double>(clock::now() - t0).count();
    if (elapsed >= kMinSample) break;
    reps = elapsed <= 0.0
               ? reps * 8
               : std::max(reps * 2, static_cast<std::size_t>(reps * kMinSample / elapsed) + 1);
  }
  double best = std::numeric_limits<double>::infinity();
  for (int round = 0; round < 3; ++round) {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < reps; ++i) fn();
    const double elapsed = std::chrono::duration<double>(clock::now() - t0).count();
    best = std::min(best, elapsed / static_cast<double>(reps));
  }
  return best;
}

}  // namespace

std::vector<BenchRow> complexity_benchmark(const std::vector<std::size_t>& n_values,
                                           const std::vector<std::size_t>& d_values,
                                           std::uint64_t seed) {
  std::vector<BenchRow> rows;
  volatile float sink = 0.0f;
  for (std::size_t n : n_values) {
    for (std::size_t d : d_values) {
      Rng rng(derive_seed(seed, n * 1000 + d));
      Tensor h = Tensor::zeros({n, d});
      for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] = rng.uniform(-1.0f, 1.0f);
      SicParamsT<float> params;
      auto random_matrix = [&](std::vector<std::size_t> shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        const float limit = 1.0f / std::sqrt(static_cast<float>(d));
        for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-limit, limit);
        return t;
      };
      params.w1 = random_matrix({d, d});
      params.w2 = random_matrix({d, d});
      params.w3 = random_matrix({d, d});
      params.s = random_matrix({d});
      params.bias = random_matrix({d});

      const auto table = enumerate_spans(n);
      BenchRow row;
      row.n = n;
      row.d = d;
      row.factorized_seconds = time_per_call([&]() {
        auto s = build_all_spans(h, params, table);
        sink = sink + s.data()[0];
      });
      row.reference_seconds = time_per_call([&]() {
        float acc = 0.0f;
        for (const auto& span : table) {
          acc += span_repr_reference(h, params, span).data()[0];
        }
        sink = sink + acc;
      });
      row.ratio = row.reference_seconds / row.factorized_seconds;
      rows.push_back(row);
    }
  }
  (void)sink;
  return rows;
}

bool ratio_monotone_in_d(const std::vector<BenchRow>& rows) {
  std::map<std::size_t, std::vector<std::pair<std::size_t, double>>> by_n;
  for (const auto& r : rows) by_n[r.n].push_back({r.d, r.ratio});
  for (auto& [n, points] : by_n) {
    std::sort(points.begin(), points.end());
    for (std::size_t i = 1; i < points.size(); ++i) {
      if (points[i].second <= points[i - 1].second) return false;
    }
  }
  return true;
}

}  // namespace spanexplain
