#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spanexplain/errors.hpp"
#include "spanexplain/model.hpp"

using namespace spanexplain;

namespace {

Tensor random_matrix(std::vector<std::size_t> shape, Rng& rng) {
  auto t = Tensor::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-1.0f, 1.0f);
  return t;
}

Model tiny_model(std::uint64_t seed = 5, bool uniform_alpha = false) {
  Dataset train;
  for (const char* text : {"f01 great movie f02", "f03 awful movie f04", "great story f05",
                           "awful story f06"}) {
    Example ex;
    ex.id = text;
    ex.text = text;
    ex.label = std::string(text).find("great") != std::string::npos ? "pos" : "neg";
    train.push_back(ex);
  }
  EncoderConfig cfg;
  cfg.model_dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_dim = 16;
  cfg.max_len = 16;
  cfg.dropout_rate = 0.0;
  return init_model(cfg, Vocab::build(train), LabelMap::build(train), seed, 0, uniform_alpha);
}

}  // namespace

TEST_CASE("span logits are per-row dot products") {
  Rng rng(2);
  auto reprs = random_matrix({5, 4}, rng);

  auto zeroed = span_logits(reprs, Tensor::zeros({4}));
  for (float v : zeroed.values()) CHECK(v == 0.0f);

  auto basis = Tensor::zeros({4});
  basis.data()[2] = 1.0f;
  auto picked = span_logits(reprs, basis);
  for (std::size_t k = 0; k < 5; ++k) CHECK(picked.data()[k] == reprs.at(k, 2));

  auto scorer = random_matrix({4}, rng);
  auto scores = span_logits(reprs, scorer);
  for (std::size_t k = 0; k < 5; ++k) {
    double acc = 0.0;
    for (std::size_t t = 0; t < 4; ++t) acc += reprs.at(k, t) * scorer.data()[t];
    CHECK(scores.data()[k] == doctest::Approx(acc).epsilon(1e-6));
  }
}

TEST_CASE("span weights normalize, sharpen, and ignore logit shifts") {
  auto uniform = span_weights(Tensor::zeros({6}));
  for (float v : uniform.values()) CHECK(v == doctest::Approx(1.0f / 6.0f));

  auto peaked = span_weights(Tensor::from({3}, {10.0f, 0.0f, 0.0f}));
  CHECK(peaked.data()[0] > 0.99f);
  CHECK(peaked.data()[0] ==
        doctest::Approx(1.0 / (1.0 + 2.0 * std::exp(-10.0))).epsilon(1e-6));

  Rng rng(3);
  auto logits = random_matrix({7}, rng);
  auto base = span_weights(logits);
  auto shifted_logits = logits.clone();
  for (auto& v : shifted_logits.values()) v += 3.75f;
  auto shifted = span_weights(shifted_logits);
  for (std::size_t k = 0; k < 7; ++k) {
    CHECK(std::abs(base.data()[k] - shifted.data()[k]) < 1e-6);
  }
}

TEST_CASE("aggregation is a convex combination of span rows") {
  Rng rng(4);
  auto reprs = random_matrix({4, 3}, rng);

  auto onehot = Tensor::zeros({4});
  onehot.data()[2] = 1.0f;
  auto selected = aggregate(onehot, reprs);
  for (std::size_t t = 0; t < 3; ++t) CHECK(selected.data()[t] == reprs.at(2, t));

  auto uniform = uniform_explanation<float>(4);
  auto mean = aggregate(uniform, reprs);
  for (std::size_t t = 0; t < 3; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < 4; ++k) acc += reprs.at(k, t);
    CHECK(mean.data()[t] == doctest::Approx(acc / 4.0).epsilon(1e-6));
  }

  auto alpha = span_weights(random_matrix({4}, rng));
  auto pooled = aggregate(alpha, reprs);
  for (std::size_t t = 0; t < 3; ++t) {
    float lo = reprs.at(0, t), hi = reprs.at(0, t);
    for (std::size_t k = 1; k < 4; ++k) {
      lo = std::min(lo, reprs.at(k, t));
      hi = std::max(hi, reprs.at(k, t));
    }
    CHECK(pooled.data()[t] >= lo - 1e-6f);
    CHECK(pooled.data()[t] <= hi + 1e-6f);
  }

  CHECK_THROWS_AS(aggregate(Tensor::zeros({3}), reprs), dimension_error);
}

TEST_CASE("class distribution closed forms") {
  HeadParamsT<float> head;
  head.class_weight = Tensor::zeros({3, 4});
  head.class_bias = Tensor::zeros({3});
  auto uniform = class_distribution(Tensor::ones({4}), head);
  for (float v : uniform.values()) CHECK(v == doctest::Approx(1.0f / 3.0f));

  HeadParamsT<float> two;
  two.class_weight = Tensor::zeros({2, 1});
  two.class_weight.at(0, 0) = std::log(3.0f);
  two.class_bias = Tensor::zeros({2});
  auto dist = class_distribution(Tensor::ones({1}), two);
  CHECK(dist.data()[0] == doctest::Approx(0.75f).epsilon(1e-6));
  CHECK(dist.data()[1] == doctest::Approx(0.25f).epsilon(1e-6));

  Rng rng(6);
  HeadParamsT<float> random_head;
  random_head.class_weight = random_matrix({4, 5}, rng);
  random_head.class_bias = random_matrix({4}, rng);
  auto pooled = random_matrix({5}, rng);
  auto logits = add(matvec(random_head.class_weight, pooled), random_head.class_bias);
  CHECK(argmax(class_distribution(pooled, random_head)) == argmax(logits));
}

TEST_CASE("sharpness attains its bounds at one-hot and uniform weights") {
  std::vector<float> onehot = {0.0f, 0.0f, 1.0f, 0.0f};
  CHECK(sharpness(onehot) == 1.0);

  for (std::size_t m : {1, 2, 6, 7, 64}) {
    std::vector<float> uniform(m, 1.0f / static_cast<float>(m));
    CHECK(std::abs(sharpness(uniform) - 1.0 / static_cast<double>(m)) < 1e-6);
  }

  std::vector<float> half = {0.5f, 0.5f, 0.0f, 0.0f};
  CHECK(sharpness(half) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("entropy sharpness closed forms") {
  std::vector<float> onehot = {1.0f, 0.0f, 0.0f};
  CHECK(entropy_sharpness(onehot) == 0.0);

  std::vector<float> uniform(5, 0.2f);
  CHECK(entropy_sharpness(uniform) == doctest::Approx(std::log(5.0)).epsilon(1e-6));

  std::vector<float> half = {0.5f, 0.5f};
  CHECK(entropy_sharpness(half) == doctest::Approx(std::log(2.0)).epsilon(1e-7));
}

TEST_CASE("objective combines the loss and the regularizer with the right signs") {
  auto probs = Tensor::from({2}, {0.25f, 0.75f});
  auto alpha = Tensor::from({4}, {0.25f, 0.25f, 0.25f, 0.25f});

  auto plain = objective(probs, 1, alpha, 0.0, RegKind::squared);
  CHECK(plain.item() == doctest::Approx(-std::log(0.75f)).epsilon(1e-6));

  auto certain = Tensor::from({2}, {0.0f, 1.0f});
  auto onehot = Tensor::from({4}, {0.0f, 1.0f, 0.0f, 0.0f});
  CHECK(objective(certain, 1, onehot, 1.0, RegKind::squared).item() ==
        doctest::Approx(-1.0f).epsilon(1e-6));

  // The paper's strongest SST-5 setting: J = CE - 1.5 Σα².
  auto best = objective(probs, 1, alpha, 1.5, RegKind::squared);
  CHECK(best.item() == doctest::Approx(-std::log(0.75f) - 1.5f * 0.25f).epsilon(1e-5));

  auto entropic = objective(probs, 1, alpha, 2.0, RegKind::entropy);
  CHECK(entropic.item() ==
        doctest::Approx(-std::log(0.75f) + 2.0f * std::log(4.0f)).epsilon(1e-5));

  CHECK_THROWS_AS(objective(probs, 1, alpha, -0.5, RegKind::squared), config_error);
}

TEST_CASE("uniform explanation composes with sharpness") {
  auto one = uniform_explanation<float>(1);
  REQUIRE(one.size() == 1);
  CHECK(one.data()[0] == 1.0f);

  auto six = uniform_explanation<float>(6);
  for (float v : six.values()) CHECK(v == doctest::Approx(1.0f / 6.0f));
  CHECK(std::abs(sharpness(six.values()) - 1.0 / 6.0) < 1e-6);
}

TEST_CASE("every forward pass keeps the weight contract") {
  auto model = tiny_model();
  Example ex;
  ex.id = "probe";
  ex.text = "f01 great movie f02 f03";
  ex.label = "pos";
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto noisy = tiny_model(seed);
    auto explanation = explain(noisy, ex);
    double total = 0.0;
    for (float a : explanation.alpha) {
      CHECK(a >= 0.0f);
      total += a;
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
    const double sq = sharpness(explanation.alpha);
    const double m = static_cast<double>(explanation.alpha.size());
    CHECK(sq >= 1.0 / m - 1e-6);
    CHECK(sq <= 1.0 + 1e-6);
  }
}

TEST_CASE("prediction depends on alpha only through the pooled vector") {
  Rng rng(8);
  HeadParamsT<float> head;
  head.class_weight = random_matrix({3, 4}, rng);
  head.class_bias = random_matrix({3}, rng);

  // Two identical span rows: swapping their weights leaves h̃ unchanged.
  auto reprs = random_matrix({3, 4}, rng);
  for (std::size_t t = 0; t < 4; ++t) reprs.at(1, t) = reprs.at(0, t);
  auto alpha = Tensor::from({3}, {0.6f, 0.1f, 0.3f});
  auto swapped = Tensor::from({3}, {0.1f, 0.6f, 0.3f});

  auto p1 = class_distribution(aggregate(alpha, reprs), head);
  auto p2 = class_distribution(aggregate(swapped, reprs), head);
  CHECK(p1.values() == p2.values());
}

TEST_CASE("chain rule check: exact frozen identity and finite-difference residual") {
  auto model = tiny_model(11);
  Example ex;
  ex.id = "x";
  ex.text = "f01 awful movie f02 f03 f04";
  ex.label = "neg";
  CHECK(chain_rule_check(model, ex) <= 1e-3);
}

TEST_CASE("zero span scorer yields uniform weights and the chain rule still holds") {
  auto model = tiny_model(12);
  std::fill(model.head.span_scorer.values().begin(), model.head.span_scorer.values().end(), 0.0f);
  Example ex;
  ex.id = "y";
  ex.text = "great story f05 f06";
  ex.label = "pos";
  auto explanation = explain(model, ex);
  const float expected = 1.0f / static_cast<float>(explanation.alpha.size());
  for (float a : explanation.alpha) CHECK(a == doctest::Approx(expected).epsilon(1e-6));
  CHECK(chain_rule_check(model, ex) <= 1e-3);
}

TEST_CASE("uniform-alpha ablation bypasses the span scorer") {
  auto model = tiny_model(13, /*uniform_alpha=*/true);
  Example ex;
  ex.id = "z";
  ex.text = "f01 great movie";
  ex.label = "pos";
  auto explanation = explain(model, ex);
  const float expected = 1.0f / static_cast<float>(explanation.alpha.size());
  for (float a : explanation.alpha) CHECK(a == expected);
  CHECK(chain_rule_check(model, ex) <= 1e-3);
}
