#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spanexplain/eval_harness.hpp"

namespace spanexplain {

// Fully-resolved run configuration: the config file's sections with
// command-line flags applied on top. Unknown config keys are rejected.
struct RunConfig {
  EncoderConfig model;
  TrainConfig train;
  SynthConfig synth;

  std::string extractor = "self_explaining";
  std::vector<double> lambdas = {0.0, 0.5, 1.0, 1.5, 2.0, 5.0};
  std::vector<std::size_t> bench_n = {16, 32, 64};
  std::vector<std::size_t> bench_d = {16, 32, 64};
  std::size_t max_candidates = 5;
  std::optional<double> theta;
  std::optional<std::size_t> top_k;
};

RunConfig default_run_config();
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& config);

// Command-line entry point (args exclude the program name). Returns 0 on
// success, 1 on input/usage errors, 2 on internal errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace spanexplain
