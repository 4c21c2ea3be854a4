#pragma once

#include <cstdint>
#include <vector>

#include "spanexplain/rng.hpp"
#include "spanexplain/tensor.hpp"

namespace spanexplain {

struct EncoderConfig {
  std::size_t vocab_size = 0;  // filled in once the vocabulary is built
  std::size_t model_dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 64;
  double dropout_rate = 0.1;

  void validate() const;
};

template <typename S>
struct EmbeddingT {
  TensorT<S> word;      // [V×D]
  TensorT<S> position;  // [max_len×D], learned
};

template <typename S>
struct EncoderBlockT {
  TensorT<S> wq, bq, wk, bk, wv, bv;  // projections, weights stored [out×in]
  TensorT<S> wo, bo;
  TensorT<S> ln1_gain, ln1_bias;
  TensorT<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  TensorT<S> ln2_gain, ln2_bias;
};

template <typename S>
struct EncoderStateT {
  TensorT<S> hidden;                   // H^K, [N×D]
  std::vector<TensorT<S>> attention;   // last-layer attention, one [N×N] per head
  std::vector<std::uint8_t> mask;
};

// H0[t] = word[token_t] + position[t]. Rejects empty input, out-of-range ids
// and overlength sequences.
template <typename S>
TensorT<S> embed(const std::vector<std::int32_t>& tokens, const EmbeddingT<S>& embedding,
                 const EncoderConfig& cfg);

// K blocks of multi-head self-attention and position-wise FFN, each followed
// by residual + layer norm. Masked positions receive exactly zero attention.
// Dropout is applied after the attention and FFN sublayers when training.
template <typename S>
EncoderStateT<S> encode(const TensorT<S>& h0, const std::vector<std::uint8_t>& mask,
                        const std::vector<EncoderBlockT<S>>& blocks, const EncoderConfig& cfg,
                        bool training = false, Rng* dropout_rng = nullptr);

// Head-averaged last-layer attention from position 0 (the BOS token) to
// every position; sums to 1 over unmasked positions.
template <typename S>
std::vector<S> cls_attention_profile(const EncoderStateT<S>& state);

EmbeddingT<float> init_embedding(const EncoderConfig& cfg, Rng& rng);
std::vector<EncoderBlockT<float>> init_encoder_blocks(const EncoderConfig& cfg, Rng& rng);

}  // namespace spanexplain
