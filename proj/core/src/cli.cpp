#include "spanexplain/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "spanexplain/errors.hpp"
#include "spanexplain/reports.hpp"

namespace spanexplain {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

void reject_unknown_keys(const nlohmann::json& obj, const std::vector<std::string>& known,
                         const std::string& section) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw config_error("config: unknown key \"" + section + key + "\"");
    }
  }
}

template <typename T>
void maybe_get(const nlohmann::json& obj, const char* key, T& out) {
  if (auto it = obj.find(key); it != obj.end()) out = it->get<T>();
}

void parse_model_section(const nlohmann::json& obj, EncoderConfig& cfg) {
  reject_unknown_keys(obj, {"model_dim", "layers", "heads", "ffn_dim", "max_len"}, "model.");
  maybe_get(obj, "model_dim", cfg.model_dim);
  maybe_get(obj, "layers", cfg.layers);
  maybe_get(obj, "heads", cfg.heads);
  maybe_get(obj, "ffn_dim", cfg.ffn_dim);
  maybe_get(obj, "max_len", cfg.max_len);
}

void parse_train_section(const nlohmann::json& obj, TrainConfig& cfg) {
  reject_unknown_keys(obj,
                      {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "epochs",
                       "lambda", "reg_kind", "seed", "grad_clip_norm", "dropout", "max_width",
                       "ablation_uniform_alpha", "min_freq"},
                      "train.");
  maybe_get(obj, "learning_rate", cfg.learning_rate);
  maybe_get(obj, "beta1", cfg.beta1);
  maybe_get(obj, "beta2", cfg.beta2);
  maybe_get(obj, "epsilon", cfg.epsilon);
  maybe_get(obj, "batch_size", cfg.batch_size);
  maybe_get(obj, "epochs", cfg.epochs);
  maybe_get(obj, "lambda", cfg.lambda);
  if (auto it = obj.find("reg_kind"); it != obj.end()) {
    cfg.reg_kind = reg_kind_from_string(it->get<std::string>());
  }
  maybe_get(obj, "seed", cfg.seed);
  maybe_get(obj, "grad_clip_norm", cfg.grad_clip_norm);
  maybe_get(obj, "dropout", cfg.dropout);
  maybe_get(obj, "max_width", cfg.max_width);
  maybe_get(obj, "ablation_uniform_alpha", cfg.ablation_uniform_alpha);
  maybe_get(obj, "min_freq", cfg.min_freq);
}

void parse_synth_section(const nlohmann::json& obj, SynthConfig& cfg) {
  reject_unknown_keys(obj,
                      {"classes", "labels", "phrases", "filler_vocab", "min_len", "max_len",
                       "negation_prob", "negation_token", "seed", "train_size", "dev_size",
                       "test_size"},
                      "synth.");
  maybe_get(obj, "classes", cfg.classes);
  maybe_get(obj, "labels", cfg.class_labels);
  maybe_get(obj, "phrases", cfg.phrases);
  maybe_get(obj, "filler_vocab", cfg.filler_vocab);
  maybe_get(obj, "min_len", cfg.min_len);
  maybe_get(obj, "max_len", cfg.max_len);
  maybe_get(obj, "negation_prob", cfg.negation_prob);
  maybe_get(obj, "negation_token", cfg.negation_token);
  maybe_get(obj, "seed", cfg.seed);
  maybe_get(obj, "train_size", cfg.train_size);
  maybe_get(obj, "dev_size", cfg.dev_size);
  maybe_get(obj, "test_size", cfg.test_size);
}

void parse_harness_section(const nlohmann::json& obj, RunConfig& cfg) {
  reject_unknown_keys(
      obj, {"extractor", "lambdas", "bench_n", "bench_d", "max_candidates", "theta", "top_k"},
      "harness.");
  maybe_get(obj, "extractor", cfg.extractor);
  maybe_get(obj, "lambdas", cfg.lambdas);
  maybe_get(obj, "bench_n", cfg.bench_n);
  maybe_get(obj, "bench_d", cfg.bench_d);
  maybe_get(obj, "max_candidates", cfg.max_candidates);
  if (auto it = obj.find("theta"); it != obj.end() && !it->is_null()) {
    cfg.theta = it->get<double>();
  }
  if (auto it = obj.find("top_k"); it != obj.end() && !it->is_null()) {
    cfg.top_k = it->get<std::size_t>();
  }
}

}  // namespace

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.synth = SynthConfig::defaults();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw config_error("config " + path + ": expected a JSON object");
  reject_unknown_keys(j, {"model", "train", "synth", "harness"}, "");

  RunConfig cfg = default_run_config();
  try {
    if (j.contains("model")) parse_model_section(j["model"], cfg.model);
    if (j.contains("train")) parse_train_section(j["train"], cfg.train);
    if (j.contains("synth")) parse_synth_section(j["synth"], cfg.synth);
    if (j.contains("harness")) parse_harness_section(j["harness"], cfg);
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config " + path + ": " + e.what());
  }
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["model"]["model_dim"] = cfg.model.model_dim;
  j["model"]["layers"] = cfg.model.layers;
  j["model"]["heads"] = cfg.model.heads;
  j["model"]["ffn_dim"] = cfg.model.ffn_dim;
  j["model"]["max_len"] = cfg.model.max_len;
  j["train"]["learning_rate"] = cfg.train.learning_rate;
  j["train"]["beta1"] = cfg.train.beta1;
  j["train"]["beta2"] = cfg.train.beta2;
  j["train"]["epsilon"] = cfg.train.epsilon;
  j["train"]["batch_size"] = cfg.train.batch_size;
  j["train"]["epochs"] = cfg.train.epochs;
  j["train"]["lambda"] = cfg.train.lambda;
  j["train"]["reg_kind"] = to_string(cfg.train.reg_kind);
  j["train"]["seed"] = cfg.train.seed;
  j["train"]["grad_clip_norm"] = cfg.train.grad_clip_norm;
  j["train"]["dropout"] = cfg.train.dropout;
  j["train"]["max_width"] = cfg.train.max_width;
  j["train"]["ablation_uniform_alpha"] = cfg.train.ablation_uniform_alpha;
  j["train"]["min_freq"] = cfg.train.min_freq;
  j["synth"]["classes"] = cfg.synth.classes;
  j["synth"]["labels"] = cfg.synth.class_labels;
  j["synth"]["phrases"] = cfg.synth.phrases;
  j["synth"]["filler_vocab"] = cfg.synth.filler_vocab;
  j["synth"]["min_len"] = cfg.synth.min_len;
  j["synth"]["max_len"] = cfg.synth.max_len;
  j["synth"]["negation_prob"] = cfg.synth.negation_prob;
  j["synth"]["negation_token"] = cfg.synth.negation_token;
  j["synth"]["seed"] = cfg.synth.seed;
  j["synth"]["train_size"] = cfg.synth.train_size;
  j["synth"]["dev_size"] = cfg.synth.dev_size;
  j["synth"]["test_size"] = cfg.synth.test_size;
  j["harness"]["extractor"] = cfg.extractor;
  j["harness"]["lambdas"] = cfg.lambdas;
  j["harness"]["bench_n"] = cfg.bench_n;
  j["harness"]["bench_d"] = cfg.bench_d;
  j["harness"]["max_candidates"] = cfg.max_candidates;
  j["harness"]["theta"] = cfg.theta ? ordered_json(*cfg.theta) : ordered_json(nullptr);
  j["harness"]["top_k"] = cfg.top_k ? ordered_json(*cfg.top_k) : ordered_json(nullptr);
  return j.dump();
}

namespace {

struct CliValues {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::string extractor;
  std::string out;

  std::string data;
  std::string model_path;
  std::string lexicon_path;
  bool identity_paraphraser = false;
  std::string html_path;
  std::optional<double> theta;
  std::optional<std::size_t> top_k;
  std::optional<std::size_t> max_candidates;
  std::vector<double> lambdas;
};

RunConfig resolve_config(const CliValues& v) {
  RunConfig cfg = v.config_path.empty() ? default_run_config() : load_run_config(v.config_path);
  if (v.seed) {
    cfg.train.seed = *v.seed;
    cfg.synth.seed = *v.seed;
  }
  if (v.lambda) cfg.train.lambda = *v.lambda;
  if (!v.extractor.empty()) cfg.extractor = v.extractor;
  if (v.theta) cfg.theta = v.theta;
  if (v.top_k) cfg.top_k = v.top_k;
  if (v.max_candidates) cfg.max_candidates = *v.max_candidates;
  if (!v.lambdas.empty()) cfg.lambdas = v.lambdas;
  return cfg;
}

int cmd_synth(const CliValues& v) {
  RunConfig cfg = resolve_config(v);
  auto data = synth_generate(cfg.synth);
  fs::create_directories(v.out);
  save_splits(v.out, data.splits);
  save_lexicon((fs::path(v.out) / "lexicon.json").string(), data.paraphrase_lexicon);
  std::ofstream meta((fs::path(v.out) / "synth_meta.json").string(), std::ios::binary);
  if (!meta) throw input_error("cannot write synth metadata");
  meta << ordered_json::parse(run_config_to_json(cfg))["synth"].dump(2) << '\n';
  std::cout << "wrote " << data.splits.train.size() << "/" << data.splits.dev.size() << "/"
            << data.splits.test.size() << " train/dev/test examples to " << v.out << "\n";
  return 0;
}

int cmd_train(const CliValues& v) {
  RunConfig cfg = resolve_config(v);
  auto splits = load_splits(v.data);
  auto result = train(splits.train, splits.dev, cfg.model, cfg.train);
  const std::string out = v.out.empty() ? "model.ckpt" : v.out;
  save_checkpoint(result.model, cfg.train, out);
  save_history(out + ".history.json", result.history, run_config_to_json(cfg));
  const auto& best = result.history.epochs[result.history.best_epoch];
  std::cout << "checkpoint " << out << " (best epoch " << result.history.best_epoch
            << ", dev accuracy " << best.dev_accuracy << ", dev sharpness "
            << best.dev_mean_sharpness << ")\n";
  return 0;
}

int cmd_eval(const CliValues& v) {
  RunConfig cfg = resolve_config(v);
  auto checkpoint = load_checkpoint(v.model_path);
  auto dataset = load_dataset(v.data);
  const double accuracy = evaluate_accuracy(checkpoint.model, dataset);
  std::cout << "accuracy " << accuracy << " on " << dataset.size() << " examples\n";
  if (!v.out.empty()) {
    save_accuracy_report(v.out, accuracy, dataset.size(), run_config_to_json(cfg));
  }
  return 0;
}

int cmd_explain(const CliValues& v) {
  RunConfig cfg = resolve_config(v);
  auto checkpoint = load_checkpoint(v.model_path);
  auto dataset = load_dataset(v.data);
  const ExtractorKind kind = extractor_from_string(cfg.extractor);

  std::vector<RationaleRecord> records;
  for (std::size_t idx = 0; idx < dataset.size(); ++idx) {
    const auto& ex = dataset[idx];
    switch (kind) {
      case ExtractorKind::self_explaining:
        if (cfg.theta || cfg.top_k) {
          auto multi = extract_spans_threshold(checkpoint.model, ex, cfg.theta, cfg.top_k);
          records.insert(records.end(), multi.begin(), multi.end());
        } else {
          records.push_back(extract_top_span(checkpoint.model, ex));
        }
        break;
      case ExtractorKind::avg_gradient:
        records.push_back(avg_gradient_span(checkpoint.model, ex));
        break;
      case ExtractorKind::avg_attention:
        records.push_back(avg_attention_span(checkpoint.model, ex));
        break;
      case ExtractorKind::identity: {
        auto record = extract_top_span(checkpoint.model, ex);
        record.span = {0, ex.content_tokens().size() - 1};
        record.span_text = detokenize(ex.content_tokens());
        record.score = 1.0;
        record.method = "identity";
        records.push_back(std::move(record));
        break;
      }
      case ExtractorKind::random_span: {
        Rng rng(derive_seed(cfg.train.seed, idx));
        auto record = extract_top_span(checkpoint.model, ex);
        const auto table = enumerate_spans(ex.content_tokens().size());
        record.span = table[rng.index(table.size())];
        record.span_text = detokenize(ex.content_tokens(), record.span.start, record.span.end);
        record.score = 0.0;
        record.method = "random";
        records.push_back(std::move(record));
        break;
      }
    }
  }
  const std::string out = v.out.empty() ? "rationales.jsonl" : v.out;
  save_rationale_records(out, records);
  std::cout << "wrote " << records.size() << " rationale records to " << out << "\n";
  if (!v.html_path.empty()) {
    render_alpha_heatmap_html(v.html_path, checkpoint.model, dataset);
    std::cout << "wrote heatmap to " << v.html_path << "\n";
  }
  return 0;
}

int cmd_faithfulness(const CliValues& v) {
  RunConfig cfg = resolve_config(v);
  auto splits = load_splits(v.data);
  auto report = run_protocols(splits, extractor_from_string(cfg.extractor), cfg.model, cfg.train);
  std::cout << "extractor " << report.extractor << ": F-S " << report.full_train_span_test
            << ", S-F " << report.span_train_full_test << ", S-S "
            << report.span_train_span_test << " (compression "
            << report.compression_ratio << ")\n";
  if (!v.out.empty()) {
    save_faithfulness_report(v.out, report, run_config_to_json(cfg));
  }
  return 0;
}

int cmd_sweep(const CliValues& v) {
  RunConfig cfg = resolve_config(v);
  auto splits = load_splits(v.data);
  auto curve = lambda_sweep(cfg.lambdas, splits, cfg.model, cfg.train);
  for (const auto& p : curve) {
    std::cout << "lambda " << p.lambda << ": dev accuracy " << p.dev_accuracy
              << ", mean sharpness " << p.mean_sharpness << "\n";
  }
  if (!v.out.empty()) save_sweep(v.out, curve, run_config_to_json(cfg));
  if (!v.html_path.empty()) render_sweep_html(v.html_path, curve);
  return 0;
}

int cmd_attack(const CliValues& v) {
  RunConfig cfg = resolve_config(v);
  auto checkpoint = load_checkpoint(v.model_path);
  auto dataset = load_dataset(v.data);

  std::unique_ptr<Paraphraser> paraphraser;
  if (v.identity_paraphraser) {
    paraphraser = std::make_unique<IdentityParaphraser>();
  } else {
    if (v.lexicon_path.empty()) {
      throw config_error("attack: give --lexicon <file> or --identity");
    }
    paraphraser = std::make_unique<DictionaryParaphraser>(
        DictionaryParaphraser::from_file(v.lexicon_path));
  }

  std::vector<AttackResult> results;
  std::size_t flips = 0;
  for (const auto& ex : dataset) {
    auto result = adversarial_attack(checkpoint.model, ex, *paraphraser, cfg.max_candidates);
    flips += result.success ? 1 : 0;
    results.push_back(std::move(result));
  }
  const std::string out = v.out.empty() ? "attacks.jsonl" : v.out;
  save_attack_results(out, results);
  std::cout << "flipped " << flips << "/" << results.size() << " predictions; log in " << out
            << "\n";
  return 0;
}

int cmd_bench(const CliValues& v) {
  RunConfig cfg = resolve_config(v);
  auto rows = complexity_benchmark(cfg.bench_n, cfg.bench_d, cfg.train.seed);
  std::cout << "    n     d   factorized(s)    reference(s)   ratio\n";
  for (const auto& r : rows) {
    std::printf("%5zu %5zu %15.6f %15.6f %7.2f\n", r.n, r.d, r.factorized_seconds,
                r.reference_seconds, r.ratio);
  }
  std::cout << (ratio_monotone_in_d(rows) ? "ratio increases with d at every n\n"
                                          : "warning: ratio not monotone in d\n");
  if (!v.out.empty()) save_bench(v.out, rows, run_config_to_json(cfg));
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Self-explaining span-based text classifier"};
  app.require_subcommand(1);

  CliValues v;

  auto add_common = [&](CLI::App* cmd, bool with_lambda = true) {
    cmd->add_option("--config", v.config_path, "JSON config file");
    cmd->add_option("--seed", v.seed, "root random seed (overrides config)");
    if (with_lambda) cmd->add_option("--lambda", v.lambda, "regularizer weight (overrides config)");
    cmd->add_option("--out", v.out, "output path");
  };

  auto* synth = app.add_subcommand("synth", "generate the planted-rationale synthetic dataset");
  add_common(synth);
  synth->get_option("--out")->required();

  auto* train_cmd = app.add_subcommand("train", "train a self-explaining classifier");
  add_common(train_cmd);
  train_cmd->add_option("--data", v.data, "dataset directory (train/dev/test.jsonl)")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--model", v.model_path, "checkpoint path")->required();
  eval_cmd->add_option("--data", v.data, "dataset file (JSON lines)")->required();

  auto* explain = app.add_subcommand("explain", "extract rationale spans");
  add_common(explain);
  explain->add_option("--model", v.model_path, "checkpoint path")->required();
  explain->add_option("--data", v.data, "dataset file (JSON lines)")->required();
  explain->add_option("--extractor", v.extractor,
                      "self_explaining|avg_gradient|avg_attention|identity|random");
  explain->add_option("--html", v.html_path, "write a span-weight heatmap page");
  explain->add_option("--theta", v.theta, "keep spans with alpha >= theta");
  explain->add_option("--top-k", v.top_k, "keep at most k non-overlapping spans");

  auto* faith = app.add_subcommand("faithfulness", "run the three train/test protocols");
  add_common(faith);
  faith->add_option("--data", v.data, "dataset directory")->required();
  faith->add_option("--extractor", v.extractor,
                    "self_explaining|avg_gradient|avg_attention|identity|random");

  auto* sweep = app.add_subcommand("sweep", "train across regularizer weights");
  add_common(sweep, /*with_lambda=*/false);
  sweep->add_option("--data", v.data, "dataset directory")->required();
  sweep->add_option("--lambdas", v.lambdas, "comma-separated lambda grid")->delimiter(',');
  sweep->add_option("--html", v.html_path, "write the sweep curve page");

  auto* attack = app.add_subcommand("attack", "span-replacement adversarial attack");
  add_common(attack);
  attack->add_option("--model", v.model_path, "checkpoint path")->required();
  attack->add_option("--data", v.data, "dataset file (JSON lines)")->required();
  attack->add_option("--lexicon", v.lexicon_path, "paraphrase lexicon (JSON)");
  attack->add_flag("--identity", v.identity_paraphraser, "use the identity paraphraser");
  attack->add_option("--max-candidates", v.max_candidates, "candidates per span");

  auto* bench = app.add_subcommand("bench", "factorized vs reference span kernel timings");
  add_common(bench);

  std::vector<const char*> argv;
  argv.push_back("spanexplain");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(v);
    if (train_cmd->parsed()) return cmd_train(v);
    if (eval_cmd->parsed()) return cmd_eval(v);
    if (explain->parsed()) return cmd_explain(v);
    if (faith->parsed()) return cmd_faithfulness(v);
    if (sweep->parsed()) return cmd_sweep(v);
    if (attack->parsed()) return cmd_attack(v);
    if (bench->parsed()) return cmd_bench(v);
    std::cerr << app.help() << std::flush;
    return 1;
  } catch (const input_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const format_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const attack_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace spanexplain
