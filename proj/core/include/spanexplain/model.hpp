#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spanexplain/dataset.hpp"
#include "spanexplain/encoder.hpp"
#include "spanexplain/explainer_head.hpp"
#include "spanexplain/span_layer.hpp"
#include "spanexplain/vocab.hpp"

namespace spanexplain {

// Tokenized model input: BOS + content tokens (+ SEP for pairs), boolean
// mask, and the positions of the content (non-special) tokens, which are the
// only positions spans are enumerated over.
struct EncodedInput {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> content_positions;
  std::vector<std::string> content_tokens;
};

EncodedInput encode_example(const Example& example, const Vocab& vocab);

template <typename S>
struct ModelT {
  EncoderConfig config;
  EmbeddingT<S> embedding;
  std::vector<EncoderBlockT<S>> blocks;
  SicParamsT<S> sic;
  HeadParamsT<S> head;
  Vocab vocab;
  LabelMap labels;
  std::size_t max_span_width = 0;  // 0 = unbounded
  bool uniform_alpha = false;      // uniform-weights ablation
};

using Model = ModelT<float>;

Model init_model(const EncoderConfig& config, const Vocab& vocab, const LabelMap& labels,
                 std::uint64_t seed, std::size_t max_span_width = 0, bool uniform_alpha = false);

template <typename S>
struct NamedParam {
  std::string name;
  TensorT<S> tensor;
};

// Every trainable tensor in canonical (checkpoint directory) order.
template <typename S>
std::vector<NamedParam<S>> named_parameters(ModelT<S>& model);

// Double-precision copy for finite-difference oracles.
ModelT<double> to_double(const Model& model);

struct ForwardOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;
};

template <typename S>
struct ForwardResultT {
  EncoderStateT<S> encoder;
  TensorT<S> h0;           // embedding output, [N×D]
  TensorT<S> content;      // content-position rows of H^K, [n×D]
  SpanTable spans;
  TensorT<S> span_reprs;   // [M×D]
  TensorT<S> span_scores;  // o, [M]
  TensorT<S> alpha;        // [M]
  TensorT<S> pooled;       // h̃, [D]
  TensorT<S> probs;        // [|Y|]
};

template <typename S>
ForwardResultT<S> forward(const ModelT<S>& model, const EncodedInput& input,
                          const ForwardOptions& opts = {});

// Inference-mode forward collecting the per-example explanation values.
Explanation explain(const Model& model, const Example& example);

std::size_t predict_label(const Model& model, const Example& example);

// Verifies Eq.-5-style consistency: the autodiff gradient of the predicted
// probability w.r.t. each span representation against central finite
// differences on a double-precision copy of the head, and the frozen-α
// identity ∂p/∂h(i,j) = α(i,j)·∂p/∂h̃ when α is treated as constant. Returns
// the maximum relative residual over both checks.
double chain_rule_check(const Model& model, const Example& example);

}  // namespace spanexplain
