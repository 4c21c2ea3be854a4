#include "spanexplain/reports.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "spanexplain/errors.hpp"

namespace spanexplain {

namespace {

using ordered_json = nlohmann::ordered_json;

nlohmann::json parse_config_echo(const std::string& run_config_json) {
  if (run_config_json.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(run_config_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw contract_error(std::string("run config echo is not valid JSON: ") + e.what());
  }
}

void write_json(const std::string& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write report file: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw input_error("failed writing report file: " + path);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open report file: " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error(path + ": " + e.what());
  }
}

ordered_json rationale_to_json(const RationaleRecord& record) {
  ordered_json obj;
  obj["id"] = record.example_id;
  obj["span"] = {record.span.start, record.span.end};
  obj["span_text"] = record.span_text;
  obj["score"] = record.score;
  obj["method"] = record.method;
  obj["predicted_label"] = record.predicted_label;
  obj["true_label"] = record.true_label;
  return obj;
}

RationaleRecord rationale_from_json(const nlohmann::json& obj) {
  RationaleRecord record;
  record.example_id = obj.at("id").get<std::string>();
  record.span.start = obj.at("span").at(0).get<std::size_t>();
  record.span.end = obj.at("span").at(1).get<std::size_t>();
  record.span_text = obj.at("span_text").get<std::string>();
  record.score = obj.at("score").get<double>();
  record.method = obj.at("method").get<std::string>();
  record.predicted_label = obj.at("predicted_label").get<std::string>();
  record.true_label = obj.at("true_label").get<std::string>();
  return record;
}

}  // namespace

void save_history(const std::string& path, const TrainHistory& history,
                  const std::string& run_config_json) {
  ordered_json j;
  j["run_config"] = parse_config_echo(run_config_json);
  j["best_epoch"] = history.best_epoch;
  ordered_json epochs = ordered_json::array();
  for (const auto& e : history.epochs) {
    ordered_json row;
    row["train_loss"] = e.train_loss;
    row["dev_accuracy"] = e.dev_accuracy;
    row["dev_mean_sharpness"] = e.dev_mean_sharpness;
    epochs.push_back(row);
  }
  j["epochs"] = std::move(epochs);
  write_json(path, j);
}

TrainHistory load_history(const std::string& path) {
  const auto j = read_json(path);
  try {
    TrainHistory history;
    history.best_epoch = j.at("best_epoch").get<std::size_t>();
    for (const auto& row : j.at("epochs")) {
      EpochStats e;
      e.train_loss = row.at("train_loss").get<double>();
      e.dev_accuracy = row.at("dev_accuracy").get<double>();
      e.dev_mean_sharpness = row.at("dev_mean_sharpness").get<double>();
      history.epochs.push_back(e);
    }
    return history;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
}

void save_faithfulness_report(const std::string& path, const FaithfulnessReport& report,
                              const std::string& run_config_json) {
  ordered_json j;
  j["run_config"] = parse_config_echo(run_config_json);
  j["extractor"] = report.extractor;
  j["accuracies"]["full_train_span_test"] = report.full_train_span_test;
  j["accuracies"]["span_train_full_test"] = report.span_train_full_test;
  j["accuracies"]["span_train_span_test"] = report.span_train_span_test;
  j["compression_ratio"] = report.compression_ratio;
  j["root_seed"] = report.root_seed;
  j["setting_seeds"] = report.setting_seeds;
  write_json(path, j);
}

FaithfulnessReport load_faithfulness_report(const std::string& path) {
  const auto j = read_json(path);
  try {
    FaithfulnessReport report;
    report.extractor = j.at("extractor").get<std::string>();
    report.full_train_span_test = j.at("accuracies").at("full_train_span_test").get<double>();
    report.span_train_full_test = j.at("accuracies").at("span_train_full_test").get<double>();
    report.span_train_span_test = j.at("accuracies").at("span_train_span_test").get<double>();
    report.compression_ratio = j.at("compression_ratio").get<double>();
    report.root_seed = j.at("root_seed").get<std::uint64_t>();
    report.setting_seeds = j.at("setting_seeds").get<std::vector<std::uint64_t>>();
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
}

void save_sweep(const std::string& path, const std::vector<SweepPoint>& curve,
                const std::string& run_config_json) {
  ordered_json j;
  j["run_config"] = parse_config_echo(run_config_json);
  ordered_json points = ordered_json::array();
  for (const auto& p : curve) {
    ordered_json row;
    row["lambda"] = p.lambda;
    row["dev_accuracy"] = p.dev_accuracy;
    row["mean_sharpness"] = p.mean_sharpness;
    points.push_back(row);
  }
  j["points"] = std::move(points);
  write_json(path, j);
}

std::vector<SweepPoint> load_sweep(const std::string& path) {
  const auto j = read_json(path);
  try {
    std::vector<SweepPoint> curve;
    for (const auto& row : j.at("points")) {
      SweepPoint p;
      p.lambda = row.at("lambda").get<double>();
      p.dev_accuracy = row.at("dev_accuracy").get<double>();
      p.mean_sharpness = row.at("mean_sharpness").get<double>();
      curve.push_back(p);
    }
    return curve;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
}

void save_bench(const std::string& path, const std::vector<BenchRow>& rows,
                const std::string& run_config_json) {
  ordered_json j;
  j["run_config"] = parse_config_echo(run_config_json);
  j["ratio_monotone_in_d"] = ratio_monotone_in_d(rows);
  ordered_json table = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row;
    row["n"] = r.n;
    row["d"] = r.d;
    row["factorized_seconds"] = r.factorized_seconds;
    row["reference_seconds"] = r.reference_seconds;
    row["ratio"] = r.ratio;
    table.push_back(row);
  }
  j["rows"] = std::move(table);
  write_json(path, j);
}

std::vector<BenchRow> load_bench(const std::string& path) {
  const auto j = read_json(path);
  try {
    std::vector<BenchRow> rows;
    for (const auto& row : j.at("rows")) {
      BenchRow r;
      r.n = row.at("n").get<std::size_t>();
      r.d = row.at("d").get<std::size_t>();
      r.factorized_seconds = row.at("factorized_seconds").get<double>();
      r.reference_seconds = row.at("reference_seconds").get<double>();
      r.ratio = row.at("ratio").get<double>();
      rows.push_back(r);
    }
    return rows;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
}

void save_accuracy_report(const std::string& path, double accuracy, std::size_t examples,
                          const std::string& run_config_json) {
  ordered_json j;
  j["run_config"] = parse_config_echo(run_config_json);
  j["examples"] = examples;
  j["accuracy"] = accuracy;
  write_json(path, j);
}

double load_accuracy_report(const std::string& path) {
  const auto j = read_json(path);
  try {
    return j.at("accuracy").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
}

void save_rationale_records(const std::string& path, const std::vector<RationaleRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write records file: " + path);
  for (const auto& r : records) out << rationale_to_json(r).dump() << '\n';
  if (!out) throw input_error("failed writing records file: " + path);
}

std::vector<RationaleRecord> load_rationale_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open records file: " + path);
  std::vector<RationaleRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(rationale_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw format_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void save_attack_results(const std::string& path, const std::vector<AttackResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write attack log: " + path);
  for (const auto& r : results) {
    ordered_json obj;
    obj["id"] = r.example_id;
    obj["original_text"] = r.original_text;
    obj["span"] = {r.attacked_span.start, r.attacked_span.end};
    obj["span_text"] = r.span_text;
    obj["candidates"] = r.candidates;
    obj["chosen"] = r.chosen ? ordered_json(*r.chosen) : ordered_json(nullptr);
    obj["attacked_text"] = r.attacked_text ? ordered_json(*r.attacked_text) : ordered_json(nullptr);
    obj["original_label"] = r.original_label;
    obj["new_label"] = r.new_label;
    obj["success"] = r.success;
    out << obj.dump() << '\n';
  }
  if (!out) throw input_error("failed writing attack log: " + path);
}

std::vector<AttackResult> load_attack_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open attack log: " + path);
  std::vector<AttackResult> results;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto obj = nlohmann::json::parse(line);
      AttackResult r;
      r.example_id = obj.at("id").get<std::string>();
      r.original_text = obj.at("original_text").get<std::string>();
      r.attacked_span.start = obj.at("span").at(0).get<std::size_t>();
      r.attacked_span.end = obj.at("span").at(1).get<std::size_t>();
      r.span_text = obj.at("span_text").get<std::string>();
      r.candidates = obj.at("candidates").get<std::vector<std::string>>();
      if (!obj.at("chosen").is_null()) r.chosen = obj.at("chosen").get<std::string>();
      if (!obj.at("attacked_text").is_null()) {
        r.attacked_text = obj.at("attacked_text").get<std::string>();
      }
      r.original_label = obj.at("original_label").get<std::string>();
      r.new_label = obj.at("new_label").get<std::string>();
      r.success = obj.at("success").get<bool>();
      results.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw format_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return results;
}

namespace {

std::string html_escape(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

void render_alpha_heatmap_html(const std::string& path, const Model& model,
                               const Dataset& examples, std::size_t max_examples) {
  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n"
       << "<title>span weight heatmaps</title>\n<style>\n"
       << "body{font-family:sans-serif;margin:20px;}\n"
       << "table{border-collapse:collapse;margin:8px 0 24px;}\n"
       << "td{width:26px;height:26px;text-align:center;font-size:9px;"
       << "border:1px solid #ddd;}\n"
       << "td.empty{border:none;}\n"
       << ".tokens span{display:inline-block;margin-right:6px;padding:2px 4px;"
       << "background:#f2f2f2;border-radius:3px;}\n"
       << "</style></head><body>\n<h1>Span weight heatmaps</h1>\n";

  const std::size_t count = std::min(max_examples, examples.size());
  for (std::size_t e = 0; e < count; ++e) {
    const auto& ex = examples[e];
    const auto explanation = explain(model, ex);
    const auto tokens = ex.content_tokens();
    const auto table = enumerate_spans(tokens.size(), model.max_span_width);

    float max_alpha = 0.0f;
    for (float a : explanation.alpha) max_alpha = std::max(max_alpha, a);
    if (max_alpha <= 0.0f) max_alpha = 1.0f;

    html << "<h2>" << html_escape(ex.id) << " &mdash; predicted "
         << html_escape(model.labels.label_of(explanation.predicted)) << ", true "
         << html_escape(ex.label) << "</h2>\n<div class=\"tokens\">";
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      html << "<span>" << t << ":" << html_escape(tokens[t]) << "</span>";
    }
    html << "</div>\n<table>\n";

    // Dense (start, end) grid; spans outside the width cap stay empty.
    std::vector<float> grid(tokens.size() * tokens.size(), -1.0f);
    for (std::size_t k = 0; k < table.size(); ++k) {
      grid[table[k].start * tokens.size() + table[k].end] = explanation.alpha[k];
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      html << "<tr>";
      for (std::size_t j = 0; j < tokens.size(); ++j) {
        const float a = grid[i * tokens.size() + j];
        if (j < i || a < 0.0f) {
          html << "<td class=\"empty\"></td>";
          continue;
        }
        const int level = static_cast<int>(255.0f * (1.0f - a / max_alpha));
        html << "<td style=\"background:rgb(255," << level << "," << level << ")\" title=\"("
             << i << "," << j << ") alpha=" << a << "\">";
        if (a >= 0.005f * max_alpha) html << static_cast<int>(std::lround(100.0f * a));
        html << "</td>";
      }
      html << "</tr>\n";
    }
    html << "</table>\n";
  }
  html << "</body></html>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write heatmap file: " + path);
  out << html.str();
  if (!out) throw input_error("failed writing heatmap file: " + path);
}

void render_sweep_html(const std::string& path, const std::vector<SweepPoint>& curve) {
  const int width = 640, height = 360, pad = 50;
  double max_lambda = 0.0;
  for (const auto& p : curve) max_lambda = std::max(max_lambda, p.lambda);
  if (max_lambda <= 0.0) max_lambda = 1.0;

  auto x_of = [&](double lambda) {
    return pad + (width - 2 * pad) * (lambda / max_lambda);
  };
  auto y_of = [&](double value) {  // value in [0, 1]
    return height - pad - (height - 2 * pad) * value;
  };
  auto polyline = [&](auto value_of) {
    std::ostringstream pts;
    for (const auto& p : curve) pts << x_of(p.lambda) << "," << y_of(value_of(p)) << " ";
    return pts.str();
  };

  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
       << "<title>lambda sweep</title></head><body>\n"
       << "<h1>Regularizer sweep</h1>\n"
       << "<svg width=\"" << width << "\" height=\"" << height
       << "\" style=\"border:1px solid #ccc\">\n"
       << "<line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\"" << width - pad
       << "\" y2=\"" << height - pad << "\" stroke=\"#333\"/>\n"
       << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\""
       << height - pad << "\" stroke=\"#333\"/>\n"
       << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\""
       << polyline([](const SweepPoint& p) { return p.dev_accuracy; }) << "\"/>\n"
       << "<polyline fill=\"none\" stroke=\"#2980b9\" stroke-width=\"2\" points=\""
       << polyline([](const SweepPoint& p) { return p.mean_sharpness; }) << "\"/>\n";
  for (const auto& p : curve) {
    html << "<circle cx=\"" << x_of(p.lambda) << "\" cy=\"" << y_of(p.dev_accuracy)
         << "\" r=\"3\" fill=\"#c0392b\"/>\n"
         << "<text x=\"" << x_of(p.lambda) << "\" y=\"" << height - pad + 16
         << "\" font-size=\"11\" text-anchor=\"middle\">" << p.lambda << "</text>\n";
  }
  html << "<text x=\"" << width - pad << "\" y=\"" << pad
       << "\" font-size=\"12\" text-anchor=\"end\" fill=\"#c0392b\">dev accuracy</text>\n"
       << "<text x=\"" << width - pad << "\" y=\"" << pad + 16
       << "\" font-size=\"12\" text-anchor=\"end\" fill=\"#2980b9\">mean sharpness</text>\n"
       << "</svg>\n</body></html>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw input_error("cannot write sweep plot: " + path);
  out << html.str();
  if (!out) throw input_error("failed writing sweep plot: " + path);
}

}  // namespace spanexplain
