#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spanexplain/encoder.hpp"
#include "spanexplain/errors.hpp"

using namespace spanexplain;

namespace {

EncoderConfig small_config(std::size_t layers = 2) {
  EncoderConfig cfg;
  cfg.vocab_size = 12;
  cfg.model_dim = 16;
  cfg.layers = layers;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.max_len = 12;
  cfg.dropout_rate = 0.0;
  return cfg;
}

struct Setup {
  EncoderConfig cfg;
  EmbeddingT<float> embedding;
  std::vector<EncoderBlockT<float>> blocks;
};

Setup make_setup(std::size_t layers = 2, std::uint64_t seed = 42) {
  Setup s;
  s.cfg = small_config(layers);
  Rng rng(seed);
  s.embedding = init_embedding(s.cfg, rng);
  s.blocks = init_encoder_blocks(s.cfg, rng);
  return s;
}

}  // namespace

TEST_CASE("embed adds word and position rows") {
  auto s = make_setup();
  CHECK_THROWS_AS(embed({}, s.embedding, s.cfg), input_error);

  auto single = embed({5}, s.embedding, s.cfg);
  for (std::size_t j = 0; j < s.cfg.model_dim; ++j) {
    CHECK(single.at(0, j) ==
          doctest::Approx(s.embedding.word.at(5, j) + s.embedding.position.at(0, j)));
  }

  auto repeated = embed({5, 5}, s.embedding, s.cfg);
  for (std::size_t j = 0; j < s.cfg.model_dim; ++j) {
    const float diff = repeated.at(0, j) - repeated.at(1, j);
    CHECK(diff == doctest::Approx(s.embedding.position.at(0, j) - s.embedding.position.at(1, j))
                      .epsilon(1e-5));
  }

  CHECK_THROWS_AS(embed({99}, s.embedding, s.cfg), input_error);
  CHECK_THROWS_AS(embed(std::vector<std::int32_t>(13, 1), s.embedding, s.cfg), input_error);
}

TEST_CASE("encode with zero layers is the identity") {
  auto s = make_setup(0);
  auto h0 = embed({1, 2, 3}, s.embedding, s.cfg);
  auto state = encode(h0, {1, 1, 1}, s.blocks, s.cfg);
  CHECK(state.hidden.values() == h0.values());
  CHECK(state.attention.empty());
}

TEST_CASE("encode rejects an all-masked input and bad mask lengths") {
  auto s = make_setup();
  auto h0 = embed({1, 2, 3}, s.embedding, s.cfg);
  CHECK_THROWS_AS(encode(h0, {0, 0, 0}, s.blocks, s.cfg), input_error);
  CHECK_THROWS_AS(encode(h0, {1, 1}, s.blocks, s.cfg), input_error);
}

TEST_CASE("attention rows over unmasked positions sum to one") {
  auto s = make_setup();
  auto h0 = embed({1, 2, 3, 4, 5}, s.embedding, s.cfg);
  std::vector<std::uint8_t> mask = {1, 1, 1, 1, 0};
  auto state = encode(h0, mask, s.blocks, s.cfg);
  REQUIRE(state.attention.size() == s.cfg.heads);
  for (const auto& head : state.attention) {
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) total += head.at(r, c);
      CHECK(std::abs(total - 1.0) < 1e-6);
      CHECK(head.at(r, 4) == 0.0f);  // masked key gets exactly zero
    }
  }
}

TEST_CASE("appending masked padding leaves unmasked outputs unchanged") {
  auto s = make_setup();
  auto h_short = embed({1, 2, 3, 4}, s.embedding, s.cfg);
  auto short_state = encode(h_short, {1, 1, 1, 1}, s.blocks, s.cfg);

  auto h_padded = embed({1, 2, 3, 4, 0, 0}, s.embedding, s.cfg);
  auto padded_state = encode(h_padded, {1, 1, 1, 1, 0, 0}, s.blocks, s.cfg);

  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t j = 0; j < s.cfg.model_dim; ++j) {
      CHECK(std::abs(short_state.hidden.at(t, j) - padded_state.hidden.at(t, j)) < 1e-5);
    }
  }
}

TEST_CASE("pad-position embedding rows receive exactly zero gradient") {
  auto s = make_setup();
  s.embedding.word.set_requires_grad(true);
  GradTape tape;
  auto h0 = embed({1, 2, 3, 0, 0}, s.embedding, s.cfg);
  auto state = encode(h0, {1, 1, 1, 0, 0}, s.blocks, s.cfg);
  // Only unmasked rows feed the loss, as in the span pipeline.
  auto visible = gather_rows(state.hidden, {0, 1, 2});
  tape.backward(sum(visible));

  const auto& grad = s.embedding.word.grad();
  const std::size_t d = s.cfg.model_dim;
  double pad_row = 0.0, used_row = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    pad_row += std::abs(grad[0 * d + j]);   // PAD token id 0
    used_row += std::abs(grad[1 * d + j]);  // token id 1
  }
  CHECK(pad_row == 0.0);
  CHECK(used_row > 0.0);
}

TEST_CASE("encode is deterministic with dropout disabled") {
  auto s = make_setup();
  auto run = [&]() {
    auto h0 = embed({3, 1, 4, 1, 5}, s.embedding, s.cfg);
    return encode(h0, {1, 1, 1, 1, 1}, s.blocks, s.cfg).hidden.values();
  };
  CHECK(run() == run());
}

TEST_CASE("cls attention profile averages head rows and normalizes") {
  auto s = make_setup();
  auto h0 = embed({2, 3, 4, 5}, s.embedding, s.cfg);
  auto state = encode(h0, {1, 1, 1, 1}, s.blocks, s.cfg);
  auto profile = cls_attention_profile(state);

  REQUIRE(profile.size() == 4);
  double total = 0.0;
  for (float p : profile) total += p;
  CHECK(std::abs(total - 1.0) < 1e-6);

  // Recompute from the raw attention tensor.
  for (std::size_t j = 0; j < 4; ++j) {
    double mean = 0.0;
    for (const auto& head : state.attention) mean += head.at(0, j);
    mean /= static_cast<double>(state.attention.size());
    CHECK(profile[j] == doctest::Approx(mean).epsilon(1e-6));
  }

  // Single unmasked position concentrates everything there.
  auto h1 = embed({2, 0}, s.embedding, s.cfg);
  auto solo = encode(h1, {1, 0}, s.blocks, s.cfg);
  auto solo_profile = cls_attention_profile(solo);
  CHECK(solo_profile[0] == doctest::Approx(1.0f));
  CHECK(solo_profile[1] == 0.0f);

  auto none = make_setup(0);
  auto empty_state = encode(embed({1}, none.embedding, none.cfg), {1}, none.blocks, none.cfg);
  CHECK_THROWS_AS(cls_attention_profile(empty_state), input_error);
}

TEST_CASE("uniform attention heads give a uniform profile") {
  // Zeroed query/key projections make every attention row uniform.
  auto s = make_setup(1);
  for (auto& blk : s.blocks) {
    std::fill(blk.wq.values().begin(), blk.wq.values().end(), 0.0f);
    std::fill(blk.wk.values().begin(), blk.wk.values().end(), 0.0f);
  }
  auto h0 = embed({1, 2, 3, 4}, s.embedding, s.cfg);
  auto state = encode(h0, {1, 1, 1, 1}, s.blocks, s.cfg);
  auto profile = cls_attention_profile(state);
  for (float p : profile) CHECK(p == doctest::Approx(0.25f).epsilon(1e-6));
}
