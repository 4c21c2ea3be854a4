#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "spanexplain/tensor.hpp"

namespace spanexplain {

// Interpretation + output layer parameters: a span-scoring vector, the class
// matrix (one row per label) and a class bias.
template <typename S>
struct HeadParamsT {
  TensorT<S> span_scorer;   // ĥ, [D]
  TensorT<S> class_weight;  // [|Y|×D]
  TensorT<S> class_bias;    // [|Y|]
};

enum class RegKind { squared, entropy };

std::string to_string(RegKind kind);
RegKind reg_kind_from_string(const std::string& name);

// o[k] = span_scorer · span_reprs[k].
template <typename S>
TensorT<S> span_logits(const TensorT<S>& span_reprs, const TensorT<S>& span_scorer);

// α = softmax(o). Validates the weight contract on every call: entries >= 0,
// Σα = 1 ± 1e-6 and 1/M <= Σα² <= 1 (up to float rounding).
template <typename S>
TensorT<S> span_weights(const TensorT<S>& span_logits);

// h̃ = Σ_k α[k]·span_reprs[k].
template <typename S>
TensorT<S> aggregate(const TensorT<S>& alpha, const TensorT<S>& span_reprs);

// p = softmax(class_weight · h̃ + class_bias).
template <typename S>
TensorT<S> class_distribution(const TensorT<S>& pooled, const HeadParamsT<S>& head);

// Σ α². Accumulated in double; range [1/M, 1].
template <typename S>
double sharpness(const std::vector<S>& alpha);

// -Σ α log α with 0·log 0 := 0; range [0, ln M].
template <typename S>
double entropy_sharpness(const std::vector<S>& alpha);

// Minimized training objective: -log p[y] - λ·Σα² (squared regularizer,
// sharp α rewarded) or -log p[y] + λ·(-Σ α log α) (entropy variant).
template <typename S>
TensorT<S> objective(const TensorT<S>& probs, std::size_t label, const TensorT<S>& alpha,
                     double lambda, RegKind kind);

// Constant α = 1/M for the uniform-weights ablation.
template <typename S>
TensorT<S> uniform_explanation(std::size_t m);

// Per-example explanation snapshot (forward values, inference mode).
struct Explanation {
  std::vector<float> alpha;        // SpanTable order
  std::vector<float> span_scores;  // o, SpanTable order
  std::vector<float> probs;
  std::size_t predicted = 0;
};

}  // namespace spanexplain
