#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spanexplain/model.hpp"

namespace spanexplain {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  double lambda = 1.0;
  RegKind reg_kind = RegKind::squared;
  std::uint64_t seed = 1;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  double dropout = 0.1;
  std::size_t max_width = 0;  // span width cap, 0 = unbounded
  bool ablation_uniform_alpha = false;
  std::size_t min_freq = 1;  // vocabulary frequency cutoff

  void validate() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  double dev_mean_sharpness = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;  // dev-accuracy-selected checkpoint
};

// Bias-corrected Adam over the model's named parameters, with optional
// global-norm gradient clipping applied before the update.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const TrainConfig& config);

  // One update from the gradients currently accumulated in the parameters.
  // Throws training_error naming the tensor if a gradient is non-finite.
  void step(std::vector<NamedParam<float>>& params);

  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  double lr_, beta1_, beta2_, eps_, clip_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

// End-to-end training: builds vocabulary and label map from the train split,
// minimizes the regularized objective with Adam, and returns the model at
// the epoch with the best dev accuracy. Deterministic for a fixed seed.
TrainResult train(const Dataset& train_set, const Dataset& dev_set,
                  const EncoderConfig& encoder_config, const TrainConfig& config);

// Fraction of argmax-correct predictions, inference mode (dropout off).
double evaluate_accuracy(const Model& model, const Dataset& dataset);

// Mean Σα² over the dataset, inference mode.
double mean_sharpness(const Model& model, const Dataset& dataset);

// Checkpoint container: one-line JSON header (version, configs, vocabulary,
// label map, named-tensor directory with shapes and byte offsets) followed
// by raw little-endian float32 sections in directory order.
void save_checkpoint(const Model& model, const TrainConfig& config, const std::string& path);

struct CheckpointData {
  Model model;
  TrainConfig train_config;
};

CheckpointData load_checkpoint(const std::string& path);

}  // namespace spanexplain
