#include "spanexplain/model.hpp"

#include <algorithm>
#include <cmath>

#include "spanexplain/errors.hpp"

namespace spanexplain {

EncodedInput encode_example(const Example& example, const Vocab& vocab) {
  EncodedInput input;
  input.ids = example.is_pair ? tokenize_pair(example.premise, example.hypothesis, vocab)
                              : tokenize(example.text, vocab);
  input.mask.assign(input.ids.size(), 1);
  input.content_tokens = example.content_tokens();
  for (std::size_t t = 0; t < input.ids.size(); ++t) {
    if (input.ids[t] != kBosId && input.ids[t] != kSepId) input.content_positions.push_back(t);
  }
  // BOS/SEP can only come from the tokenizer, so the position count always
  // matches the segmented content tokens.
  if (input.content_positions.size() != input.content_tokens.size()) {
    throw contract_error("encode_example: content position/token mismatch");
  }
  return input;
}

Model init_model(const EncoderConfig& config, const Vocab& vocab, const LabelMap& labels,
                 std::uint64_t seed, std::size_t max_span_width, bool uniform_alpha) {
  EncoderConfig cfg = config;
  cfg.vocab_size = vocab.size();
  cfg.validate();
  if (labels.size() < 2) throw config_error("init_model: need at least 2 labels");

  Rng rng(derive_seed(seed, 0));
  Model m;
  m.config = cfg;
  m.embedding = init_embedding(cfg, rng);
  m.blocks = init_encoder_blocks(cfg, rng);
  m.sic = init_sic_params(cfg.model_dim, rng);

  const float limit = 1.0f / std::sqrt(static_cast<float>(cfg.model_dim));
  m.head.span_scorer = Tensor::zeros({cfg.model_dim});
  for (std::size_t i = 0; i < cfg.model_dim; ++i)
    m.head.span_scorer.data()[i] = rng.uniform(-limit, limit);
  m.head.span_scorer.set_requires_grad(true);
  m.head.class_weight = Tensor::zeros({labels.size(), cfg.model_dim});
  for (std::size_t i = 0; i < m.head.class_weight.size(); ++i)
    m.head.class_weight.data()[i] = rng.uniform(-limit, limit);
  m.head.class_weight.set_requires_grad(true);
  m.head.class_bias = Tensor::zeros({labels.size()}).set_requires_grad(true);

  m.vocab = vocab;
  m.labels = labels;
  m.max_span_width = max_span_width;
  m.uniform_alpha = uniform_alpha;
  return m;
}

template <typename S>
std::vector<NamedParam<S>> named_parameters(ModelT<S>& model) {
  std::vector<NamedParam<S>> out;
  out.push_back({"embedding.word", model.embedding.word});
  out.push_back({"embedding.position", model.embedding.position});
  for (std::size_t k = 0; k < model.blocks.size(); ++k) {
    auto& blk = model.blocks[k];
    const std::string p = "encoder." + std::to_string(k) + ".";
    out.push_back({p + "attn.wq", blk.wq});
    out.push_back({p + "attn.bq", blk.bq});
    out.push_back({p + "attn.wk", blk.wk});
    out.push_back({p + "attn.bk", blk.bk});
    out.push_back({p + "attn.wv", blk.wv});
    out.push_back({p + "attn.bv", blk.bv});
    out.push_back({p + "attn.wo", blk.wo});
    out.push_back({p + "attn.bo", blk.bo});
    out.push_back({p + "ln1.gain", blk.ln1_gain});
    out.push_back({p + "ln1.bias", blk.ln1_bias});
    out.push_back({p + "ffn.w1", blk.ffn_w1});
    out.push_back({p + "ffn.b1", blk.ffn_b1});
    out.push_back({p + "ffn.w2", blk.ffn_w2});
    out.push_back({p + "ffn.b2", blk.ffn_b2});
    out.push_back({p + "ln2.gain", blk.ln2_gain});
    out.push_back({p + "ln2.bias", blk.ln2_bias});
  }
  out.push_back({"sic.w1", model.sic.w1});
  out.push_back({"sic.w2", model.sic.w2});
  out.push_back({"sic.w3", model.sic.w3});
  out.push_back({"sic.s", model.sic.s});
  out.push_back({"sic.bias", model.sic.bias});
  out.push_back({"head.span_scorer", model.head.span_scorer});
  out.push_back({"head.class_weight", model.head.class_weight});
  out.push_back({"head.class_bias", model.head.class_bias});
  return out;
}

namespace {

TensorT<double> widen(const Tensor& t) {
  TensorT<double> out = TensorT<double>::zeros(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out.data()[i] = static_cast<double>(t.data()[i]);
  out.set_requires_grad(t.requires_grad());
  return out;
}

}  // namespace

ModelT<double> to_double(const Model& model) {
  ModelT<double> out;
  out.config = model.config;
  out.embedding.word = widen(model.embedding.word);
  out.embedding.position = widen(model.embedding.position);
  out.blocks.resize(model.blocks.size());
  for (std::size_t k = 0; k < model.blocks.size(); ++k) {
    const auto& src = model.blocks[k];
    auto& dst = out.blocks[k];
    dst.wq = widen(src.wq);
    dst.bq = widen(src.bq);
    dst.wk = widen(src.wk);
    dst.bk = widen(src.bk);
    dst.wv = widen(src.wv);
    dst.bv = widen(src.bv);
    dst.wo = widen(src.wo);
    dst.bo = widen(src.bo);
    dst.ln1_gain = widen(src.ln1_gain);
    dst.ln1_bias = widen(src.ln1_bias);
    dst.ffn_w1 = widen(src.ffn_w1);
    dst.ffn_b1 = widen(src.ffn_b1);
    dst.ffn_w2 = widen(src.ffn_w2);
    dst.ffn_b2 = widen(src.ffn_b2);
    dst.ln2_gain = widen(src.ln2_gain);
    dst.ln2_bias = widen(src.ln2_bias);
  }
  out.sic.w1 = widen(model.sic.w1);
  out.sic.w2 = widen(model.sic.w2);
  out.sic.w3 = widen(model.sic.w3);
  out.sic.s = widen(model.sic.s);
  out.sic.bias = widen(model.sic.bias);
  out.head.span_scorer = widen(model.head.span_scorer);
  out.head.class_weight = widen(model.head.class_weight);
  out.head.class_bias = widen(model.head.class_bias);
  out.vocab = model.vocab;
  out.labels = model.labels;
  out.max_span_width = model.max_span_width;
  out.uniform_alpha = model.uniform_alpha;
  return out;
}

template <typename S>
ForwardResultT<S> forward(const ModelT<S>& model, const EncodedInput& input,
                          const ForwardOptions& opts) {
  if (input.content_positions.empty()) {
    throw input_error("forward: input has no content tokens");
  }
  ForwardResultT<S> r;
  r.h0 = embed(input.ids, model.embedding, model.config);
  r.encoder = encode(r.h0, input.mask, model.blocks, model.config, opts.training,
                     opts.dropout_rng);
  r.content = gather_rows(r.encoder.hidden, input.content_positions);
  r.spans = enumerate_spans(input.content_positions.size(), model.max_span_width);
  r.span_reprs = build_all_spans(r.content, model.sic, r.spans);
  r.span_scores = span_logits(r.span_reprs, model.head.span_scorer);
  r.alpha = model.uniform_alpha ? uniform_explanation<S>(r.spans.size())
                                : span_weights(r.span_scores);
  r.pooled = aggregate(r.alpha, r.span_reprs);
  r.probs = class_distribution(r.pooled, model.head);
  return r;
}

Explanation explain(const Model& model, const Example& example) {
  auto input = encode_example(example, model.vocab);
  auto result = forward(model, input);
  Explanation e;
  e.alpha = result.alpha.values();
  e.span_scores = result.span_scores.values();
  e.probs = result.probs.values();
  e.predicted = argmax(result.probs);
  return e;
}

std::size_t predict_label(const Model& model, const Example& example) {
  auto input = encode_example(example, model.vocab);
  return argmax(forward(model, input).probs);
}

double chain_rule_check(const Model& model, const Example& example) {
  auto dmodel = to_double(model);
  auto input = encode_example(example, model.vocab);

  // Frozen span matrix: the head is differentiated with h(i,j) as leaves.
  auto base = forward(dmodel, input);
  const std::size_t m = base.span_reprs.rows();
  const std::size_t d = base.span_reprs.cols();
  const std::size_t label = argmax(base.probs);

  auto head_prob = [&](const TensorT<double>& span_matrix) {
    auto scores = span_logits(span_matrix, dmodel.head.span_scorer);
    auto alpha = dmodel.uniform_alpha ? uniform_explanation<double>(span_matrix.rows())
                                      : span_weights(scores);
    auto pooled = aggregate(alpha, span_matrix);
    auto probs = class_distribution(pooled, dmodel.head);
    return select(probs, label);
  };

  // Autodiff gradient of p(ŷ) w.r.t. every span representation.
  TensorT<double> leaf = base.span_reprs.clone();
  leaf.set_requires_grad(true);
  std::vector<double> grad_auto;
  {
    GradTapeT<double> tape;
    auto p = head_prob(leaf);
    tape.backward(p);
    grad_auto = leaf.grad();
  }

  // Central finite differences on the same double-precision head.
  const double h = 1e-5;
  double residual = 0.0;
  TensorT<double> probe = base.span_reprs.clone();
  for (std::size_t i = 0; i < m * d; ++i) {
    const double keep = probe.data()[i];
    probe.data()[i] = keep + h;
    const double up = head_prob(probe).item();
    probe.data()[i] = keep - h;
    const double down = head_prob(probe).item();
    probe.data()[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double ad = grad_auto[i];
    if (std::abs(ad) > 1e-6 || std::abs(fd) > 1e-6) {
      residual = std::max(residual, std::abs(ad - fd) / std::max(std::abs(ad), std::abs(fd)));
    }
  }

  // Frozen-α identity: with α constant, ∂p/∂h(i,j) = α(i,j) · ∂p/∂h̃.
  std::vector<double> pooled_grad;
  {
    GradTapeT<double> tape;
    TensorT<double> pooled_leaf = base.pooled.clone();
    pooled_leaf.set_requires_grad(true);
    auto p = select(class_distribution(pooled_leaf, dmodel.head), label);
    tape.backward(p);
    pooled_grad = pooled_leaf.grad();
  }
  std::vector<double> frozen_auto;
  {
    GradTapeT<double> tape;
    TensorT<double> frozen_leaf = base.span_reprs.clone();
    frozen_leaf.set_requires_grad(true);
    TensorT<double> alpha_const = TensorT<double>::from({m}, base.alpha.values());
    auto p = select(class_distribution(aggregate(alpha_const, frozen_leaf), dmodel.head), label);
    tape.backward(p);
    frozen_auto = frozen_leaf.grad();
  }
  for (std::size_t k = 0; k < m; ++k) {
    const double ak = base.alpha.data()[k];
    for (std::size_t t = 0; t < d; ++t) {
      const double expected = ak * pooled_grad[t];
      const double got = frozen_auto[k * d + t];
      if (std::abs(expected) > 1e-9 || std::abs(got) > 1e-9) {
        residual = std::max(residual, std::abs(expected - got) /
                                          std::max(std::abs(expected), std::abs(got)));
      }
    }
  }
  return residual;
}

template std::vector<NamedParam<float>> named_parameters<float>(ModelT<float>&);
template std::vector<NamedParam<double>> named_parameters<double>(ModelT<double>&);
template struct ForwardResultT<float>;
template struct ForwardResultT<double>;
template ForwardResultT<float> forward<float>(const ModelT<float>&, const EncodedInput&,
                                              const ForwardOptions&);
template ForwardResultT<double> forward<double>(const ModelT<double>&, const EncodedInput&,
                                                const ForwardOptions&);

}  // namespace spanexplain
