#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "spanexplain/errors.hpp"
#include "spanexplain/span_layer.hpp"

using namespace spanexplain;

namespace {

template <typename S>
TensorT<S> random_tensor(std::vector<std::size_t> shape, Rng& rng, float lo = -1.0f,
                         float hi = 1.0f) {
  auto t = TensorT<S>::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

template <typename S>
SicParamsT<S> random_params(std::size_t d, Rng& rng) {
  const float limit = 1.0f / std::sqrt(static_cast<float>(d));
  SicParamsT<S> p;
  p.w1 = random_tensor<S>({d, d}, rng, -limit, limit);
  p.w2 = random_tensor<S>({d, d}, rng, -limit, limit);
  p.w3 = random_tensor<S>({d, d}, rng, -limit, limit);
  p.s = random_tensor<S>({d}, rng, -1.0f, 1.0f);
  p.bias = random_tensor<S>({d}, rng, -0.5f, 0.5f);
  return p;
}

template <typename S>
double factorized_vs_reference(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = 2 + rng.index(11);  // N <= 12
  const std::size_t d = 4 + rng.index(29);  // D <= 32
  auto h = random_tensor<S>({n, d}, rng);
  auto params = random_params<S>(d, rng);
  auto pre = precompute(h, params);

  double worst = 0.0;
  for (const auto& span : enumerate_spans(n)) {
    auto fact = span_repr_factorized(pre, span, params);
    auto ref = span_repr_reference(h, params, span);
    for (std::size_t t = 0; t < d; ++t) {
      worst = std::max(worst, std::abs(static_cast<double>(fact.data()[t]) -
                                       static_cast<double>(ref.data()[t])));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("enumerate_spans is complete, ordered, and width-cappable") {
  auto three = enumerate_spans(3);
  REQUIRE(three.size() == 6);
  const SpanTable expected = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};
  CHECK(three == expected);

  auto one = enumerate_spans(1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == SpanIndex{0, 0});

  CHECK(enumerate_spans(4, 2).size() == 7);  // 4 singletons + 3 bigrams
  CHECK_THROWS_AS(enumerate_spans(0), input_error);

  // Completeness and uniqueness over a range of lengths.
  for (std::size_t n = 1; n <= 9; ++n) {
    auto table = enumerate_spans(n);
    CHECK(table.size() == n * (n + 1) / 2);
    for (std::size_t k = 1; k < table.size(); ++k) {
      const bool ordered = table[k - 1].start < table[k].start ||
                           (table[k - 1].start == table[k].start &&
                            table[k - 1].end < table[k].end);
      CHECK(ordered);
    }
  }
}

TEST_CASE("precompute identities") {
  Rng rng(17);
  auto h = random_tensor<float>({5, 8}, rng);
  auto params = random_params<float>(8, rng);

  SUBCASE("unit hadamard vector leaves rows unchanged") {
    params.s = Tensor::ones({8});
    auto pre = precompute(h, params);
    CHECK(pre.p.values() == h.values());
  }
  SUBCASE("zero weight matrix annihilates its projection") {
    params.w1 = Tensor::zeros({8, 8});
    auto pre = precompute(h, params);
    for (float v : pre.a.values()) CHECK(v == 0.0f);
  }
  SUBCASE("projections match direct per-row products") {
    auto pre = precompute(h, params);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t r = 0; r < 8; ++r) {
        double acc = 0.0;
        for (std::size_t t = 0; t < 8; ++t) acc += params.w1.at(r, t) * h.at(i, t);
        CHECK(pre.a.at(i, r) == doctest::Approx(acc).epsilon(1e-5));
      }
    }
  }
  SUBCASE("shape mismatch is rejected") {
    auto bad = random_params<float>(4, rng);
    CHECK_THROWS_AS(precompute(h, bad), dimension_error);
  }
}

TEST_CASE("factorized degenerate closed forms") {
  const std::size_t d = 6;
  Rng rng(23);
  auto h = random_tensor<float>({4, d}, rng);

  SUBCASE("identity start/end weights on a singleton span give tanh(2 h_i)") {
    SicParamsT<float> params = random_params<float>(d, rng);
    params.w1 = Tensor::zeros({d, d});
    params.w2 = Tensor::zeros({d, d});
    for (std::size_t t = 0; t < d; ++t) {
      params.w1.at(t, t) = 1.0f;
      params.w2.at(t, t) = 1.0f;
    }
    params.s = Tensor::zeros({d});
    params.bias = Tensor::zeros({d});
    auto pre = precompute(h, params);
    auto repr = span_repr_factorized(pre, {2, 2}, params);
    for (std::size_t t = 0; t < d; ++t) {
      CHECK(repr.data()[t] == doctest::Approx(std::tanh(2.0f * h.at(2, t))).epsilon(1e-5));
    }
  }
  SUBCASE("all-zero parameters give the zero vector") {
    SicParamsT<float> params;
    params.w1 = Tensor::zeros({d, d});
    params.w2 = Tensor::zeros({d, d});
    params.w3 = Tensor::zeros({d, d});
    params.s = Tensor::zeros({d});
    params.bias = Tensor::zeros({d});
    auto pre = precompute(h, params);
    for (const auto& span : enumerate_spans(4)) {
      for (float v : span_repr_factorized(pre, span, params).values()) CHECK(v == 0.0f);
    }
  }
}

TEST_CASE("reference oracle closed forms") {
  const std::size_t d = 5;
  Rng rng(29);

  SUBCASE("opposite start/end weights cancel on equal endpoints") {
    auto params = random_params<float>(d, rng);
    for (std::size_t i = 0; i < d * d; ++i) params.w2.values()[i] = -params.w1.values()[i];
    params.s = Tensor::zeros({d});
    params.bias = Tensor::zeros({d});
    auto h = Tensor::zeros({3, d});
    auto row = random_tensor<float>({d}, rng);
    for (std::size_t j = 0; j < d; ++j) {
      h.at(0, j) = row.data()[j];
      h.at(1, j) = row.data()[j];
    }
    auto repr = span_repr_reference(h, params, {0, 1});
    for (float v : repr.values()) CHECK(std::abs(v) < 1e-6f);
  }
  SUBCASE("pairwise branch alone on all-ones endpoints gives tanh(s*s)") {
    SicParamsT<float> params;
    params.w1 = Tensor::zeros({d, d});
    params.w2 = Tensor::zeros({d, d});
    params.w3 = Tensor::zeros({d, d});
    params.s = random_tensor<float>({d}, rng);
    params.bias = Tensor::zeros({d});
    auto h = Tensor::ones({2, d});
    auto repr = span_repr_reference(h, params, {0, 1});
    for (std::size_t t = 0; t < d; ++t) {
      const float st = params.s.data()[t];
      CHECK(repr.data()[t] == doctest::Approx(std::tanh(st * st)).epsilon(1e-6));
    }
  }
}

TEST_CASE("factorized equals reference over 100 randomized cases") {
  double worst_double = 0.0;
  double worst_float = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    worst_double = std::max(worst_double, factorized_vs_reference<double>(seed));
    worst_float = std::max(worst_float, factorized_vs_reference<float>(seed));
  }
  CHECK(worst_double < 1e-6);
  CHECK(worst_float < 1e-6);
}

TEST_CASE("build_all_spans rows follow the table and the factorized path") {
  Rng rng(31);
  auto h = random_tensor<float>({6, 8}, rng);
  auto params = random_params<float>(8, rng);
  auto table = enumerate_spans(6);
  auto all = build_all_spans(h, params, table);
  REQUIRE(all.rows() == table.size());

  auto pre = precompute(h, params);
  for (std::size_t k = 0; k < table.size(); ++k) {
    auto row = span_repr_factorized(pre, table[k], params);
    for (std::size_t t = 0; t < 8; ++t) CHECK(all.at(k, t) == row.data()[t]);
  }

  auto solo = build_all_spans(random_tensor<float>({1, 8}, rng), params, enumerate_spans(1));
  CHECK(solo.rows() == 1);
}

TEST_CASE("gradients flow through build_all_spans to the hidden rows") {
  Rng rng(37);
  const std::size_t n = 5, d = 6;
  auto h = random_tensor<double>({n, d}, rng);
  auto params = random_params<double>(d, rng);
  auto probe = random_tensor<double>({d}, rng);
  auto table = enumerate_spans(n);
  h.set_requires_grad(true);

  auto loss_of = [&]() { return sum(tanh_op(matvec(build_all_spans(h, params, table), probe))); };
  {
    GradTapeT<double> tape;
    tape.backward(loss_of());
  }
  auto fd = sx_test::central_diff(h, [&]() { return loss_of().item(); }, 1e-5);
  CHECK(sx_test::max_rel_error(h.grad(), fd) < 1e-3);
}

TEST_CASE("gradients flow through build_all_spans to every span parameter") {
  Rng rng(41);
  const std::size_t n = 4, d = 5;
  auto h = random_tensor<double>({n, d}, rng);
  auto params = random_params<double>(d, rng);
  auto probe = random_tensor<double>({d}, rng);
  auto table = enumerate_spans(n);

  TensorT<double>* leaves[] = {&params.w1, &params.w2, &params.w3, &params.s, &params.bias};
  auto loss_of = [&]() { return sum(tanh_op(matvec(build_all_spans(h, params, table), probe))); };
  for (auto* leaf : leaves) {
    leaf->set_requires_grad(true);
    leaf->zero_grad();
    {
      GradTapeT<double> tape;
      tape.backward(loss_of());
    }
    auto fd = sx_test::central_diff(*leaf, [&]() { return loss_of().item(); }, 1e-5);
    CHECK(sx_test::max_rel_error(leaf->grad(), fd) < 1e-3);
    leaf->set_requires_grad(false);
  }
}
