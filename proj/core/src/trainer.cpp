#include "spanexplain/trainer.hpp"

#include <cmath>
#include <numeric>

#include "spanexplain/errors.hpp"

namespace spanexplain {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw config_error("train config: learning_rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw config_error("train config: betas must be in [0, 1)");
  }
  if (epsilon <= 0.0) throw config_error("train config: epsilon must be positive");
  if (epochs < 1) throw config_error("train config: epochs must be >= 1");
  if (batch_size < 1) throw config_error("train config: batch_size must be >= 1");
  if (lambda < 0.0) throw config_error("train config: lambda must be >= 0");
  if (grad_clip_norm < 0.0) throw config_error("train config: grad_clip_norm must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) throw config_error("train config: dropout must be in [0, 1)");
}

AdamOptimizer::AdamOptimizer(const TrainConfig& config)
    : lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon),
      clip_(config.grad_clip_norm) {}

void AdamOptimizer::step(std::vector<NamedParam<float>>& params) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) p.tensor.zero_grad();
    for (float g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw training_error("non-finite gradient in tensor \"" + p.name + "\"");
      }
    }
  }

  if (clip_ > 0.0) {
    double norm_sq = 0.0;
    for (auto& p : params) {
      for (float g : p.tensor.grad()) norm_sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(norm_sq);
    if (norm > clip_) {
      const float factor = static_cast<float>(clip_ / norm);
      for (auto& p : params) {
        for (float& g : p.tensor.mutable_grad()) g *= factor;
      }
    }
  }

  ++t_;
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& p : params) {
    auto& mom = state_[p.name];
    if (mom.m.size() != p.tensor.size()) {
      mom.m.assign(p.tensor.size(), 0.0f);
      mom.v.assign(p.tensor.size(), 0.0f);
    }
    const auto& grad = p.tensor.grad();
    float* w = p.tensor.data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double g = grad[i];
      const double m = beta1_ * mom.m[i] + (1.0 - beta1_) * g;
      const double v = beta2_ * mom.v[i] + (1.0 - beta2_) * g * g;
      mom.m[i] = static_cast<float>(m);
      mom.v[i] = static_cast<float>(v);
      const double m_hat = m / bias1;
      const double v_hat = v / bias2;
      w[i] = static_cast<float>(w[i] - lr_ * m_hat / (std::sqrt(v_hat) + eps_));
    }
  }
}

namespace {

struct PreparedExample {
  EncodedInput input;
  std::size_t label = 0;
};

std::vector<PreparedExample> prepare(const Dataset& data, const Vocab& vocab,
                                     const LabelMap& labels, const EncoderConfig& cfg) {
  std::vector<PreparedExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) {
    PreparedExample p;
    p.input = encode_example(ex, vocab);
    if (p.input.ids.size() > cfg.max_len) {
      throw input_error("example \"" + ex.id + "\": length " +
                        std::to_string(p.input.ids.size()) + " exceeds max_len " +
                        std::to_string(cfg.max_len));
    }
    p.label = labels.id_of(ex.label);
    out.push_back(std::move(p));
  }
  return out;
}

double accuracy_on(const Model& model, const std::vector<PreparedExample>& data) {
  std::size_t correct = 0;
  for (const auto& ex : data) {
    if (argmax(forward(model, ex.input).probs) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double sharpness_on(const Model& model, const std::vector<PreparedExample>& data) {
  double total = 0.0;
  for (const auto& ex : data) {
    total += sharpness(forward(model, ex.input).alpha.values());
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

TrainResult train(const Dataset& train_set, const Dataset& dev_set,
                  const EncoderConfig& encoder_config, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw input_error("train: empty training set");
  if (dev_set.empty()) throw input_error("train: empty dev set");

  Vocab vocab = Vocab::build(train_set, config.min_freq);
  LabelMap labels = LabelMap::build(train_set);
  for (const auto& ex : dev_set) {
    if (!labels.contains(ex.label)) {
      throw input_error("train: dev label \"" + ex.label + "\" unseen in training split");
    }
  }

  EncoderConfig enc = encoder_config;
  enc.dropout_rate = config.dropout;

  Model model = init_model(enc, vocab, labels, derive_seed(config.seed, 1), config.max_width,
                           config.ablation_uniform_alpha);
  auto params = named_parameters(model);

  auto train_prepared = prepare(train_set, vocab, labels, model.config);
  auto dev_prepared = prepare(dev_set, vocab, labels, model.config);

  AdamOptimizer optimizer(config);
  Rng shuffle_rng(derive_seed(config.seed, 2));
  Rng dropout_rng(derive_seed(config.seed, 3));

  TrainHistory history;
  double best_accuracy = -1.0;
  std::vector<std::vector<float>> best_params;

  std::vector<std::size_t> order(train_prepared.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      for (auto& p : params) p.tensor.zero_grad();

      GradTape tape;
      Tensor total;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& ex = train_prepared[order[k]];
        ForwardOptions opts;
        opts.training = true;
        opts.dropout_rng = &dropout_rng;
        auto result = forward(model, ex.input, opts);
        auto loss = objective(result.probs, ex.label, result.alpha, config.lambda,
                              config.reg_kind);
        total = k == begin ? loss : add(total, loss);
      }
      auto mean_loss = scale(total, 1.0f / static_cast<float>(end - begin));
      tape.backward(mean_loss);
      optimizer.step(params);

      loss_sum += static_cast<double>(mean_loss.item()) * static_cast<double>(end - begin);
      seen += end - begin;
    }

    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(seen);
    stats.dev_accuracy = accuracy_on(model, dev_prepared);
    stats.dev_mean_sharpness = sharpness_on(model, dev_prepared);
    history.epochs.push_back(stats);

    if (stats.dev_accuracy > best_accuracy) {
      best_accuracy = stats.dev_accuracy;
      history.best_epoch = epoch;
      best_params.clear();
      for (auto& p : params) best_params.push_back(p.tensor.values());
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].tensor.values() = best_params[i];
    params[i].tensor.clear_grad();
  }
  return {std::move(model), std::move(history)};
}

double evaluate_accuracy(const Model& model, const Dataset& dataset) {
  if (dataset.empty()) throw input_error("evaluate_accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& ex : dataset) {
    const std::size_t want = model.labels.id_of(ex.label);
    if (predict_label(model, ex) == want) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

double mean_sharpness(const Model& model, const Dataset& dataset) {
  if (dataset.empty()) throw input_error("mean_sharpness: empty dataset");
  double total = 0.0;
  for (const auto& ex : dataset) {
    total += sharpness(explain(model, ex).alpha);
  }
  return total / static_cast<double>(dataset.size());
}

}  // namespace spanexplain
