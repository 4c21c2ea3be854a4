#include "spanexplain/encoder.hpp"

#include <cmath>
#include <string>

#include "spanexplain/errors.hpp"

namespace spanexplain {

void EncoderConfig::validate() const {
  if (model_dim == 0 || heads == 0 || ffn_dim == 0 || max_len == 0) {
    throw config_error("encoder config: dimensions must be positive");
  }
  if (model_dim % heads != 0) {
    throw config_error("encoder config: model_dim " + std::to_string(model_dim) +
                       " not divisible by heads " + std::to_string(heads));
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw config_error("encoder config: dropout_rate must be in [0, 1)");
  }
}

template <typename S>
TensorT<S> embed(const std::vector<std::int32_t>& tokens, const EmbeddingT<S>& embedding,
                 const EncoderConfig& cfg) {
  if (tokens.empty()) throw input_error("embed: empty token sequence");
  if (tokens.size() > cfg.max_len) {
    throw input_error("embed: sequence length " + std::to_string(tokens.size()) +
                      " exceeds max_len " + std::to_string(cfg.max_len));
  }
  const std::size_t v = embedding.word.rows();
  std::vector<std::size_t> rows(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= v) {
      throw input_error("embed: token id " + std::to_string(tokens[t]) +
                        " out of range for vocab of " + std::to_string(v));
    }
    rows[t] = static_cast<std::size_t>(tokens[t]);
  }
  auto words = gather_rows(embedding.word, rows);
  auto positions = slice_rows(embedding.position, 0, tokens.size());
  return add(words, positions);
}

template <typename S>
EncoderStateT<S> encode(const TensorT<S>& h0, const std::vector<std::uint8_t>& mask,
                        const std::vector<EncoderBlockT<S>>& blocks, const EncoderConfig& cfg,
                        bool training, Rng* dropout_rng) {
  const std::size_t n = h0.rows();
  const std::size_t d = h0.cols();
  if (mask.size() != n) {
    throw input_error("encode: mask length " + std::to_string(mask.size()) + " vs " +
                      std::to_string(n) + " positions");
  }
  bool any = false;
  for (auto m : mask) any = any || (m != 0);
  if (!any) throw input_error("encode: all positions masked");

  const std::size_t heads = cfg.heads;
  const std::size_t dk = d / heads;
  const S inv_sqrt_dk = S(1) / std::sqrt(S(dk));
  const bool use_dropout = training && cfg.dropout_rate > 0.0 && dropout_rng != nullptr;

  EncoderStateT<S> state;
  state.mask = mask;
  TensorT<S> h = h0;
  for (std::size_t layer = 0; layer < blocks.size(); ++layer) {
    const auto& blk = blocks[layer];
    auto q = add_rowwise(matmul_nt(h, blk.wq), blk.bq);
    auto k = add_rowwise(matmul_nt(h, blk.wk), blk.bk);
    auto v = add_rowwise(matmul_nt(h, blk.wv), blk.bv);

    std::vector<TensorT<S>> contexts;
    std::vector<TensorT<S>> attn_maps;
    contexts.reserve(heads);
    for (std::size_t a = 0; a < heads; ++a) {
      auto qa = slice_cols(q, a * dk, (a + 1) * dk);
      auto ka = slice_cols(k, a * dk, (a + 1) * dk);
      auto va = slice_cols(v, a * dk, (a + 1) * dk);
      auto scores = scale(matmul_nt(qa, ka), inv_sqrt_dk);
      auto attn = masked_row_softmax(scores, mask);
      if (layer + 1 == blocks.size()) attn_maps.push_back(attn);
      contexts.push_back(matmul(attn, va));
    }
    auto attended = add_rowwise(matmul_nt(concat_cols(contexts), blk.wo), blk.bo);
    if (use_dropout) attended = dropout(attended, cfg.dropout_rate, *dropout_rng);
    h = layer_norm(add(h, attended), blk.ln1_gain, blk.ln1_bias);

    auto inner = relu(add_rowwise(matmul_nt(h, blk.ffn_w1), blk.ffn_b1));
    auto ffn = add_rowwise(matmul_nt(inner, blk.ffn_w2), blk.ffn_b2);
    if (use_dropout) ffn = dropout(ffn, cfg.dropout_rate, *dropout_rng);
    h = layer_norm(add(h, ffn), blk.ln2_gain, blk.ln2_bias);

    if (layer + 1 == blocks.size()) state.attention = std::move(attn_maps);
  }
  state.hidden = h;
  return state;
}

template <typename S>
std::vector<S> cls_attention_profile(const EncoderStateT<S>& state) {
  if (state.attention.empty()) {
    throw input_error("cls_attention_profile: encoder state carries no attention maps");
  }
  const std::size_t n = state.attention.front().rows();
  std::vector<S> profile(n, S(0));
  for (const auto& head : state.attention) {
    for (std::size_t j = 0; j < n; ++j) profile[j] += head.at(0, j);
  }
  const S inv = S(1) / static_cast<S>(state.attention.size());
  for (auto& p : profile) p *= inv;
  return profile;
}

namespace {

Tensor uniform_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const float limit = 1.0f / std::sqrt(static_cast<float>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-limit, limit);
  t.set_requires_grad(true);
  return t;
}

Tensor zeros_param(std::vector<std::size_t> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Tensor ones_param(std::vector<std::size_t> shape) {
  Tensor t = Tensor::ones(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

EmbeddingT<float> init_embedding(const EncoderConfig& cfg, Rng& rng) {
  EmbeddingT<float> e;
  e.word = uniform_init({cfg.vocab_size, cfg.model_dim}, cfg.model_dim, rng);
  e.position = uniform_init({cfg.max_len, cfg.model_dim}, cfg.model_dim, rng);
  return e;
}

std::vector<EncoderBlockT<float>> init_encoder_blocks(const EncoderConfig& cfg, Rng& rng) {
  std::vector<EncoderBlockT<float>> blocks(cfg.layers);
  const std::size_t d = cfg.model_dim;
  for (auto& blk : blocks) {
    blk.wq = uniform_init({d, d}, d, rng);
    blk.bq = zeros_param({d});
    blk.wk = uniform_init({d, d}, d, rng);
    blk.bk = zeros_param({d});
    blk.wv = uniform_init({d, d}, d, rng);
    blk.bv = zeros_param({d});
    blk.wo = uniform_init({d, d}, d, rng);
    blk.bo = zeros_param({d});
    blk.ln1_gain = ones_param({d});
    blk.ln1_bias = zeros_param({d});
    blk.ffn_w1 = uniform_init({cfg.ffn_dim, d}, d, rng);
    blk.ffn_b1 = zeros_param({cfg.ffn_dim});
    blk.ffn_w2 = uniform_init({d, cfg.ffn_dim}, cfg.ffn_dim, rng);
    blk.ffn_b2 = zeros_param({d});
    blk.ln2_gain = ones_param({d});
    blk.ln2_bias = zeros_param({d});
  }
  return blocks;
}

#define SPANEXPLAIN_INSTANTIATE_ENCODER(S)                                                      \
  template struct EmbeddingT<S>;                                                                \
  template struct EncoderBlockT<S>;                                                             \
  template struct EncoderStateT<S>;                                                             \
  template TensorT<S> embed<S>(const std::vector<std::int32_t>&, const EmbeddingT<S>&,          \
                               const EncoderConfig&);                                           \
  template EncoderStateT<S> encode<S>(const TensorT<S>&, const std::vector<std::uint8_t>&,     \
                                      const std::vector<EncoderBlockT<S>>&, const EncoderConfig&, \
                                      bool, Rng*);                                              \
  template std::vector<S> cls_attention_profile<S>(const EncoderStateT<S>&);

SPANEXPLAIN_INSTANTIATE_ENCODER(float)
SPANEXPLAIN_INSTANTIATE_ENCODER(double)

#undef SPANEXPLAIN_INSTANTIATE_ENCODER

}  // namespace spanexplain
