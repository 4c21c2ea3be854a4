#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "gradcheck.hpp"
#include "spanexplain/errors.hpp"
#include "spanexplain/rng.hpp"
#include "spanexplain/tensor.hpp"

using namespace spanexplain;

namespace {

template <typename S>
TensorT<S> random_tensor(std::vector<std::size_t> shape, Rng& rng, S lo = S(-1), S hi = S(1)) {
  auto t = TensorT<S>::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t.data()[i] = static_cast<S>(rng.uniform(static_cast<float>(lo), static_cast<float>(hi)));
  }
  return t;
}

}  // namespace

TEST_CASE("matmul matches hand arithmetic and identity") {
  auto identity = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto a = Tensor::from({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto out = matmul(identity, a);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(out.data()[i] == a.data()[i]);

  auto left = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto right = Tensor::from({2, 1}, {0, 1});
  auto prod = matmul(left, right);
  CHECK(prod.at(0, 0) == doctest::Approx(2.0f));
  CHECK(prod.at(1, 0) == doctest::Approx(4.0f));

  CHECK_THROWS_AS(matmul(left, Tensor::zeros({3, 2})), dimension_error);
}

TEST_CASE("gradient of sum(A*B) w.r.t. A is ones * B^T") {
  Rng rng(3);
  auto a = random_tensor<float>({3, 4}, rng);
  auto b = random_tensor<float>({4, 2}, rng);
  a.set_requires_grad(true);

  GradTape tape;
  auto loss = sum(matmul(a, b));
  tape.backward(loss);

  // d/dA sum(AB) = ones(3,2) · B^T
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      float expected = 0.0f;
      for (std::size_t c = 0; c < 2; ++c) expected += b.at(j, c);
      CHECK(a.grad()[i * 4 + j] == doctest::Approx(expected).epsilon(1e-6));
    }
  }
}

TEST_CASE("elementwise identities") {
  Rng rng(5);
  auto x = random_tensor<float>({4, 3}, rng);
  auto ones = Tensor::ones({4, 3});
  auto had = hadamard(x, ones);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(had.data()[i] == x.data()[i]);

  auto diff = sub(x, x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(diff.data()[i] == 0.0f);

  CHECK(tanh_op(Tensor::scalar(0.0f)).item() == 0.0f);

  auto big = tanh_op(Tensor::from({3}, {50.0f, -50.0f, 0.5f}));
  CHECK(big.data()[0] < 1.0f);
  CHECK(big.data()[1] > -1.0f);
  CHECK(big.data()[0] > 0.999f);

  CHECK_THROWS_AS(add(x, Tensor::zeros({2, 2})), dimension_error);
}

TEST_CASE("softmax_vec normalization, shift invariance, closed form") {
  auto half = softmax_vec(Tensor::from({2}, {0.0f, 0.0f}));
  CHECK(half.data()[0] == doctest::Approx(0.5f));
  CHECK(half.data()[1] == doctest::Approx(0.5f));

  auto flat = softmax_vec(Tensor::from({4}, {3.5f, 3.5f, 3.5f, 3.5f}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(flat.data()[i] == doctest::Approx(0.25f));

  auto closed = softmax_vec(Tensor::from({2}, {std::log(2.0f), 0.0f}));
  CHECK(closed.data()[0] == doctest::Approx(2.0f / 3.0f).epsilon(1e-6));
  CHECK(closed.data()[1] == doctest::Approx(1.0f / 3.0f).epsilon(1e-6));

  Rng rng(11);
  auto logits = random_tensor<float>({9}, rng, -4.0f, 4.0f);
  auto p = softmax_vec(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p.data()[i] > 0.0f);
    total += p.data()[i];
  }
  CHECK(std::abs(total - 1.0) < 1e-6);

  auto shifted_in = logits.clone();
  for (std::size_t i = 0; i < shifted_in.size(); ++i) shifted_in.data()[i] += 7.25f;
  auto shifted = softmax_vec(shifted_in);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(std::abs(shifted.data()[i] - p.data()[i]) < 1e-6);
  }

  CHECK_THROWS_AS(softmax_vec(Tensor::zeros({0})), domain_error);
}

TEST_CASE("cross_entropy closed forms and clamping") {
  CHECK(cross_entropy(Tensor::from({3}, {0.0f, 1.0f, 0.0f}), 1).item() == doctest::Approx(0.0f));
  CHECK(cross_entropy(Tensor::from({2}, {0.5f, 0.5f}), 0).item() ==
        doctest::Approx(std::log(2.0f)).epsilon(1e-6));

  auto clamped = cross_entropy(Tensor::from({2}, {0.0f, 1.0f}), 0);
  CHECK(std::isfinite(clamped.item()));
  CHECK(clamped.item() == doctest::Approx(-std::log(1e-12f)).epsilon(1e-4));

  CHECK_THROWS_AS(cross_entropy(Tensor::from({2}, {0.5f, 0.5f}), 2), domain_error);
}

TEST_CASE("layer_norm degenerate and closed-form cases") {
  auto gain = Tensor::ones({4});
  auto bias = Tensor::zeros({4});

  auto constant = layer_norm(Tensor::full({4}, 3.0f), gain, bias);
  for (std::size_t i = 0; i < 4; ++i) CHECK(constant.data()[i] == doctest::Approx(0.0f));

  auto two = layer_norm(Tensor::from({2}, {-1.0f, 1.0f}), Tensor::ones({2}), Tensor::zeros({2}));
  CHECK(two.data()[0] == doctest::Approx(-1.0f).epsilon(1e-4));
  CHECK(two.data()[1] == doctest::Approx(1.0f).epsilon(1e-4));

  Rng rng(7);
  auto x = random_tensor<float>({6, 8}, rng, -2.0f, 2.0f);
  auto g8 = Tensor::ones({8});
  auto b8 = Tensor::zeros({8});
  auto normed = layer_norm(x, g8, b8);
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mean += normed.at(r, c);
    mean /= 8.0;
    for (std::size_t c = 0; c < 8; ++c) {
      var += (normed.at(r, c) - mean) * (normed.at(r, c) - mean);
    }
    var /= 8.0;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);  // epsilon in the denominator shrinks it slightly
  }

  auto any = random_tensor<float>({5}, rng);
  auto b5 = Tensor::from({5}, {1, 2, 3, 4, 5});
  auto annihilated = layer_norm(any, Tensor::zeros({5}), b5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(annihilated.data()[i] == b5.data()[i]);

  CHECK_THROWS_AS(layer_norm(Tensor::ones({1}), Tensor::ones({1}), Tensor::zeros({1})),
                  domain_error);
}

TEST_CASE("backward linear cases") {
  auto x = Tensor::from({5}, {1, 2, 3, 4, 5}).set_requires_grad(true);
  {
    GradTape tape;
    tape.backward(sum(x));
  }
  for (float g : x.grad()) CHECK(g == 1.0f);

  auto z = Tensor::zeros({4}).set_requires_grad(true);
  {
    GradTape tape;
    tape.backward(sum(tanh_op(z)));
  }
  for (float g : z.grad()) CHECK(g == 1.0f);  // 1 - tanh(0)^2 == 1
}

TEST_CASE("repeated backward without reset accumulates whole passes") {
  auto x = Tensor::from({3}, {1, 2, 3}).set_requires_grad(true);
  GradTape tape;
  auto loss = sum(hadamard(x, x));
  tape.backward(loss);
  const std::vector<float> once = x.grad();
  tape.backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x.grad()[i] == doctest::Approx(2.0f * once[i]));
  }
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = Tensor::ones({3}).set_requires_grad(true);
  GradTape tape;
  auto y = scale(x, 2.0f);
  CHECK_THROWS_AS(tape.backward(y), contract_error);
}

TEST_CASE("float autodiff matches finite differences on a 3-layer composition") {
  Rng rng(21);
  auto a = random_tensor<float>({4, 5}, rng, -0.5f, 0.5f).set_requires_grad(true);
  auto b = random_tensor<float>({5, 3}, rng, -0.5f, 0.5f).set_requires_grad(true);
  auto c = random_tensor<float>({4, 3}, rng, -0.5f, 0.5f).set_requires_grad(true);

  {
    GradTape tape;
    auto loss = sum(tanh_op(add(matmul(a, b), c)));
    tape.backward(loss);
  }

  // Double-precision forward for the difference quotient.
  auto ad = TensorT<double>::zeros({4, 5});
  auto bd = TensorT<double>::zeros({5, 3});
  auto cd = TensorT<double>::zeros({4, 3});
  for (std::size_t i = 0; i < ad.size(); ++i) ad.data()[i] = a.data()[i];
  for (std::size_t i = 0; i < bd.size(); ++i) bd.data()[i] = b.data()[i];
  for (std::size_t i = 0; i < cd.size(); ++i) cd.data()[i] = c.data()[i];
  auto forward = [&]() { return sum(tanh_op(add(matmul(ad, bd), cd))).item(); };

  const double h = 1e-3;
  CHECK(sx_test::max_rel_error(a.grad(), sx_test::central_diff(ad, forward, h)) < 1e-3);
  CHECK(sx_test::max_rel_error(b.grad(), sx_test::central_diff(bd, forward, h)) < 1e-3);
  CHECK(sx_test::max_rel_error(c.grad(), sx_test::central_diff(cd, forward, h)) < 1e-3);
}

TEST_CASE("every primitive passes the finite-difference oracle") {
  // Double precision isolates the backward formulas from float rounding.
  Rng rng(33);
  auto m = random_tensor<double>({4, 6}, rng);
  auto n = random_tensor<double>({6, 3}, rng);
  auto nt = random_tensor<double>({5, 6}, rng);
  auto v6 = random_tensor<double>({6}, rng);
  auto v4 = random_tensor<double>({4}, rng);
  auto square = random_tensor<double>({4, 6}, rng);
  auto gain = random_tensor<double>({6}, rng, 0.5, 1.5);
  auto bias = random_tensor<double>({6}, rng);
  auto logits = random_tensor<double>({7}, rng, -2.0, 2.0);

  struct Case {
    const char* name;
    TensorT<double>* leaf;
    std::function<TensorT<double>()> forward;
  };
  std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1};
  const std::vector<Case> cases = {
      {"matmul_lhs", &m, [&]() { return sum(matmul(m, n)); }},
      {"matmul_rhs", &n, [&]() { return sum(matmul(m, n)); }},
      {"matmul_nt", &nt, [&]() { return sum(tanh_op(matmul_nt(m, nt))); }},
      {"add", &m, [&]() { return sum(tanh_op(add(m, square))); }},
      {"sub", &square, [&]() { return sum(tanh_op(sub(m, square))); }},
      {"hadamard", &m, [&]() { return sum(hadamard(m, square)); }},
      {"scale", &m, [&]() { return sum(scale(m, 0.7)); }},
      {"relu", &m, [&]() { return sum(relu(m)); }},
      {"add_rowwise", &v6, [&]() { return sum(tanh_op(add_rowwise(m, v6))); }},
      {"mul_rowwise", &v6, [&]() { return sum(tanh_op(mul_rowwise(m, v6))); }},
      {"matvec", &v6, [&]() { return sum(tanh_op(matvec(m, v6))); }},
      {"vecmat", &v4, [&]() { return sum(tanh_op(vecmat(v4, m))); }},
      {"dot", &v6, [&]() { return dot(v6, gain); }},
      {"select", &v6, [&]() { return select(v6, 2); }},
      {"softmax_vec", &logits, [&]() { return select(softmax_vec(logits), 3); }},
      {"cross_entropy", &logits, [&]() { return cross_entropy(softmax_vec(logits), 2); }},
      {"entropy", &logits, [&]() { return entropy(softmax_vec(logits)); }},
      {"layer_norm_x", &m, [&]() { return sum(layer_norm(m, gain, bias)); }},
      {"layer_norm_gain", &gain, [&]() { return sum(tanh_op(layer_norm(m, gain, bias))); }},
      {"layer_norm_bias", &bias, [&]() { return sum(tanh_op(layer_norm(m, gain, bias))); }},
      {"masked_row_softmax", &square,
       [&]() { return select(sum(masked_row_softmax(square, mask)), 0); }},
      {"gather_rows", &m, [&]() { return sum(tanh_op(gather_rows(m, {0, 2, 2, 3}))); }},
      {"slice_cols", &m, [&]() { return sum(tanh_op(slice_cols(m, 1, 4))); }},
      {"concat_cols", &m,
       [&]() { return sum(tanh_op(concat_cols({slice_cols(m, 0, 2), slice_cols(m, 2, 6)}))); }},
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    c.leaf->set_requires_grad(true);
    c.leaf->zero_grad();
    {
      GradTapeT<double> tape;
      tape.backward(c.forward());
    }
    auto fd = sx_test::central_diff(*c.leaf, [&]() { return c.forward().item(); }, 1e-5);
    CHECK(sx_test::max_rel_error(c.leaf->grad(), fd) < 1e-3);
    c.leaf->set_requires_grad(false);
    c.leaf->clear_grad();
  }
}

TEST_CASE("masked softmax assigns exact zeros and zero gradients to masked keys") {
  Rng rng(9);
  auto scores = random_tensor<float>({4, 4}, rng).set_requires_grad(true);
  std::vector<std::uint8_t> mask = {1, 0, 1, 1};
  GradTape tape;
  auto attn = masked_row_softmax(scores, mask);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(attn.at(r, 1) == 0.0f);
    double total = 0.0;
    for (std::size_t c = 0; c < 4; ++c) total += attn.at(r, c);
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
  tape.backward(select(sum(attn), 0));
  for (std::size_t r = 0; r < 4; ++r) CHECK(scores.grad()[r * 4 + 1] == 0.0f);
}

TEST_CASE("forward passes are bitwise deterministic") {
  auto run = []() {
    Rng rng(1234);
    auto a = random_tensor<float>({6, 6}, rng);
    auto b = random_tensor<float>({6, 6}, rng);
    auto out = softmax_vec(matvec(tanh_op(matmul(a, b)), random_tensor<float>({6}, rng)));
    return out.values();
  };
  auto first = run();
  auto second = run();
  CHECK(first == second);
}

TEST_CASE("dropout is identity at rate zero and rescales kept entries") {
  Rng rng(77);
  auto x = Tensor::ones({1000});
  auto same = dropout(x, 0.0, rng);
  CHECK(same.values() == x.values());

  auto dropped = dropout(x, 0.5, rng);
  std::size_t kept = 0;
  for (float v : dropped.values()) {
    if (v != 0.0f) {
      CHECK(v == doctest::Approx(2.0f));
      ++kept;
    }
  }
  CHECK(kept > 350);
  CHECK(kept < 650);
  CHECK_THROWS_AS(dropout(x, 1.0, rng), config_error);
}
