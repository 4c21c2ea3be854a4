#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "spanexplain/eval_harness.hpp"
#include "spanexplain/errors.hpp"
#include "spanexplain/trainer.hpp"

using namespace spanexplain;

namespace {

EncoderConfig small_encoder() {
  EncoderConfig cfg;
  cfg.model_dim = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.max_len = 24;
  return cfg;
}

TrainConfig fast_train(std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.dropout = 0.0;
  cfg.lambda = 1.0;
  return cfg;
}

SynthConfig small_task(std::uint64_t seed = 1) {
  SynthConfig cfg = SynthConfig::defaults();
  cfg.seed = seed;
  cfg.train_size = 200;
  cfg.dev_size = 60;
  cfg.test_size = 60;
  cfg.min_len = 6;
  cfg.max_len = 10;
  return cfg;
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("adam leaves parameters untouched under zero gradients") {
  auto cfg = fast_train();
  AdamOptimizer opt(cfg);
  Model model = [] {
    Dataset d;
    Example a;
    a.id = "a";
    a.text = "x y z";
    a.label = "p";
    Example b = a;
    b.label = "q";
    d = {a, b};
    return init_model(small_encoder(), Vocab::build(d), LabelMap::build(d), 3);
  }();
  auto params = named_parameters(model);
  std::vector<std::vector<float>> before;
  for (auto& p : params) {
    p.tensor.zero_grad();
    before.push_back(p.tensor.values());
  }
  opt.step(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i].tensor.values() == before[i]);
  }
}

TEST_CASE("first adam step has magnitude lr with unit gradient") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  AdamOptimizer opt(cfg);

  Model model = [] {
    Dataset d;
    Example a;
    a.id = "a";
    a.text = "x";
    a.label = "p";
    Example b = a;
    b.label = "q";
    d = {a, b};
    return init_model(small_encoder(), Vocab::build(d), LabelMap::build(d), 3);
  }();
  auto params = named_parameters(model);
  std::vector<float> before = params[0].tensor.values();
  for (auto& p : params) {
    auto& g = p.tensor.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0f);
  }
  // A single unit-gradient coordinate; clipping leaves |g| = 1 alone.
  params[0].tensor.mutable_grad()[0] = 1.0f;
  opt.step(params);
  const float delta = before[0] - params[0].tensor.values()[0];
  CHECK(delta == doctest::Approx(0.1f).epsilon(1e-4));  // bias correction cancels at t=1
}

TEST_CASE("adam is deterministic for identical state and gradients") {
  auto run = []() {
    TrainConfig cfg;
    AdamOptimizer opt(cfg);
    Dataset d;
    Example a;
    a.id = "a";
    a.text = "x y";
    a.label = "p";
    Example b = a;
    b.label = "q";
    d = {a, b};
    Model model = init_model(small_encoder(), Vocab::build(d), LabelMap::build(d), 5);
    auto params = named_parameters(model);
    for (int step = 0; step < 3; ++step) {
      for (auto& p : params) {
        auto& g = p.tensor.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.01f * static_cast<float>(i % 7);
      }
      opt.step(params);
    }
    return params[0].tensor.values();
  };
  CHECK(run() == run());
}

TEST_CASE("adam rejects non-finite gradients naming the tensor") {
  TrainConfig cfg;
  AdamOptimizer opt(cfg);
  Dataset d;
  Example a;
  a.id = "a";
  a.text = "x";
  a.label = "p";
  Example b = a;
  b.label = "q";
  d = {a, b};
  Model model = init_model(small_encoder(), Vocab::build(d), LabelMap::build(d), 5);
  auto params = named_parameters(model);
  for (auto& p : params) p.tensor.zero_grad();
  params[2].tensor.mutable_grad()[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(opt.step(params), doctest::Contains(params[2].name.c_str()),
                       training_error);
}

TEST_CASE("one unregularized gradient step decreases the loss on one example") {
  Dataset train;
  Example ex;
  ex.id = "only";
  ex.text = "f01 truly wonderful gem f02";
  ex.label = "pos";
  Example other = ex;
  other.id = "other";
  other.text = "f01 utterly dreadful mess f02";
  other.label = "neg";
  train = {ex, other};

  Model model = init_model(small_encoder(), Vocab::build(train), LabelMap::build(train), 7);
  auto params = named_parameters(model);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.lambda = 0.0;
  AdamOptimizer opt(cfg);

  auto input = encode_example(ex, model.vocab);
  const std::size_t label = model.labels.id_of(ex.label);
  auto loss_value = [&]() {
    auto result = forward(model, input);
    return objective(result.probs, label, result.alpha, 0.0, RegKind::squared).item();
  };

  const float before = loss_value();
  for (auto& p : params) p.tensor.zero_grad();
  {
    GradTape tape;
    auto result = forward(model, input);
    tape.backward(objective(result.probs, label, result.alpha, 0.0, RegKind::squared));
  }
  opt.step(params);
  CHECK(loss_value() < before);
}

TEST_CASE("overfitting a single example drives the loss below 1e-2 within 500 steps") {
  Dataset train;
  Example ex;
  ex.id = "only";
  ex.text = "f01 truly wonderful gem f02";
  ex.label = "pos";
  Example other = ex;
  other.id = "other";
  other.text = "f03 utterly dreadful mess f04";
  other.label = "neg";
  train = {ex, other};

  Model model = init_model(small_encoder(), Vocab::build(train), LabelMap::build(train), 9);
  auto params = named_parameters(model);
  TrainConfig cfg;
  cfg.lambda = 0.0;
  AdamOptimizer opt(cfg);

  auto input = encode_example(ex, model.vocab);
  const std::size_t label = model.labels.id_of(ex.label);
  float loss = 0.0f;
  for (int step = 0; step < 500; ++step) {
    for (auto& p : params) p.tensor.zero_grad();
    GradTape tape;
    auto result = forward(model, input);
    auto obj = objective(result.probs, label, result.alpha, 0.0, RegKind::squared);
    tape.backward(obj);
    opt.step(params);
    loss = obj.item();
    if (loss < 1e-2f) break;
  }
  CHECK(loss < 1e-2f);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto data = synth_generate(small_task());
  auto run = [&]() {
    return train(data.splits.train, data.splits.dev, small_encoder(), fast_train(17));
  };
  auto first = run();
  auto second = run();
  REQUIRE(first.history.epochs.size() == second.history.epochs.size());
  for (std::size_t e = 0; e < first.history.epochs.size(); ++e) {
    CHECK(first.history.epochs[e].train_loss == second.history.epochs[e].train_loss);
    CHECK(first.history.epochs[e].dev_accuracy == second.history.epochs[e].dev_accuracy);
    CHECK(first.history.epochs[e].dev_mean_sharpness ==
          second.history.epochs[e].dev_mean_sharpness);
  }
  auto p1 = named_parameters(first.model);
  auto p2 = named_parameters(second.model);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].tensor.values() == p2[i].tensor.values());
}

TEST_CASE("train rejects empty datasets and unseen dev labels") {
  auto data = synth_generate(small_task());
  CHECK_THROWS_AS(train({}, data.splits.dev, small_encoder(), fast_train()), input_error);
  CHECK_THROWS_AS(train(data.splits.train, {}, small_encoder(), fast_train()), input_error);

  auto bad_dev = data.splits.dev;
  bad_dev[0].label = "mystery";
  CHECK_THROWS_AS(train(data.splits.train, bad_dev, small_encoder(), fast_train()), input_error);
}

TEST_CASE("uniform-alpha ablation trains and pins sharpness to 1/M") {
  auto data = synth_generate(small_task(3));
  auto cfg = fast_train(3);
  cfg.ablation_uniform_alpha = true;
  cfg.epochs = 2;
  auto result = train(data.splits.train, data.splits.dev, small_encoder(), cfg);
  CHECK(result.model.uniform_alpha);
  auto explanation = explain(result.model, data.splits.dev[0]);
  const float expected = 1.0f / static_cast<float>(explanation.alpha.size());
  for (float a : explanation.alpha) CHECK(a == expected);
}

TEST_CASE("regularized training sharpens dev-set span weights") {
  auto data = synth_generate(small_task(5));
  auto base = fast_train(5);
  base.epochs = 5;

  auto relaxed = base;
  relaxed.lambda = 0.0;
  auto sharp = base;
  sharp.lambda = 1.0;

  auto loose_model = train(data.splits.train, data.splits.dev, small_encoder(), relaxed);
  auto sharp_model = train(data.splits.train, data.splits.dev, small_encoder(), sharp);
  const double loose = mean_sharpness(loose_model.model, data.splits.dev);
  const double strong = mean_sharpness(sharp_model.model, data.splits.dev);
  CHECK(strong > loose);
}

TEST_CASE("planted-rationale task reaches 0.95 dev accuracy within 10 epochs") {
  // Desk-scale defaults, three seeds.
  EncoderConfig desk;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    SynthConfig task = SynthConfig::defaults();
    task.seed = seed;
    task.train_size = 200;
    task.dev_size = 60;
    task.test_size = 60;
    auto data = synth_generate(task);

    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 10;
    auto result = train(data.splits.train, data.splits.dev, desk, cfg);
    CHECK(result.history.epochs[result.history.best_epoch].dev_accuracy >= 0.95);
  }
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption") {
  auto data = synth_generate(small_task(7));
  auto cfg = fast_train(7);
  cfg.epochs = 2;
  auto result = train(data.splits.train, data.splits.dev, small_encoder(), cfg);

  const auto path = temp_file("spanexplain_ckpt.bin");
  const auto path2 = temp_file("spanexplain_ckpt2.bin");
  save_checkpoint(result.model, cfg, path.string());
  auto loaded = load_checkpoint(path.string());
  save_checkpoint(loaded.model, loaded.train_config, path2.string());

  auto read_all = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(read_all(path) == read_all(path2));

  // Bitwise-identical parameters and predictions.
  auto p1 = named_parameters(result.model);
  auto p2 = named_parameters(loaded.model);
  REQUIRE(p1.size() == p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].name == p2[i].name);
    CHECK(p1[i].tensor.values() == p2[i].tensor.values());
  }
  for (std::size_t i = 0; i < 50 && i < data.splits.test.size(); ++i) {
    auto a = explain(result.model, data.splits.test[i]);
    auto b = explain(loaded.model, data.splits.test[i]);
    CHECK(a.probs == b.probs);
    CHECK(a.alpha == b.alpha);
  }
  CHECK(evaluate_accuracy(result.model, data.splits.test) ==
        evaluate_accuracy(loaded.model, data.splits.test));

  // Truncation is rejected.
  auto bytes = read_all(path);
  std::ofstream(temp_file("spanexplain_trunc.bin"), std::ios::binary)
      << bytes.substr(0, bytes.size() - 17);
  CHECK_THROWS_AS(load_checkpoint(temp_file("spanexplain_trunc.bin").string()), format_error);

  // Version mismatch is rejected.
  auto newline = bytes.find('\n');
  auto tampered = bytes;
  const std::string needle = "\"version\":1";
  tampered.replace(bytes.find(needle), needle.size(), "\"version\":9");
  std::ofstream(temp_file("spanexplain_ver.bin"), std::ios::binary) << tampered;
  CHECK_THROWS_AS(load_checkpoint(temp_file("spanexplain_ver.bin").string()), format_error);
  (void)newline;

  std::filesystem::remove(path);
  std::filesystem::remove(path2);
  std::filesystem::remove(temp_file("spanexplain_trunc.bin"));
  std::filesystem::remove(temp_file("spanexplain_ver.bin"));
}

TEST_CASE("evaluate_accuracy rejects empty datasets and unknown labels") {
  auto data = synth_generate(small_task(9));
  auto cfg = fast_train(9);
  cfg.epochs = 1;
  auto result = train(data.splits.train, data.splits.dev, small_encoder(), cfg);
  CHECK_THROWS_AS(evaluate_accuracy(result.model, {}), input_error);

  auto stranger = data.splits.test;
  stranger[0].label = "mystery";
  CHECK_THROWS_AS(evaluate_accuracy(result.model, stranger), input_error);

  const double acc = evaluate_accuracy(result.model, data.splits.test);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}
