#pragma once

#include <string>
#include <vector>

#include "spanexplain/eval_harness.hpp"

namespace spanexplain {

// All report writers embed the fully-resolved run configuration
// (run_config_json, a serialized JSON object; "{}" when not applicable) and
// every artifact is re-readable by the matching loader.

void save_history(const std::string& path, const TrainHistory& history,
                  const std::string& run_config_json);
TrainHistory load_history(const std::string& path);

void save_faithfulness_report(const std::string& path, const FaithfulnessReport& report,
                              const std::string& run_config_json);
FaithfulnessReport load_faithfulness_report(const std::string& path);

void save_sweep(const std::string& path, const std::vector<SweepPoint>& curve,
                const std::string& run_config_json);
std::vector<SweepPoint> load_sweep(const std::string& path);

void save_bench(const std::string& path, const std::vector<BenchRow>& rows,
                const std::string& run_config_json);
std::vector<BenchRow> load_bench(const std::string& path);

void save_accuracy_report(const std::string& path, double accuracy, std::size_t examples,
                          const std::string& run_config_json);
double load_accuracy_report(const std::string& path);

// JSON lines, one record per example.
void save_rationale_records(const std::string& path, const std::vector<RationaleRecord>& records);
std::vector<RationaleRecord> load_rationale_records(const std::string& path);

void save_attack_results(const std::string& path, const std::vector<AttackResult>& results);
std::vector<AttackResult> load_attack_results(const std::string& path);

// Self-contained static HTML (no external resources): per-example α heatmap
// rendered as an upper-triangular span grid.
void render_alpha_heatmap_html(const std::string& path, const Model& model,
                               const Dataset& examples, std::size_t max_examples = 16);

// Self-contained static HTML: dev accuracy and mean sharpness against λ.
void render_sweep_html(const std::string& path, const std::vector<SweepPoint>& curve);

}  // namespace spanexplain
