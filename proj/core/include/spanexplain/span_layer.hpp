#pragma once

#include <cstddef>
#include <vector>

#include "spanexplain/tensor.hpp"

namespace spanexplain {

// Inclusive token interval over the content tokens (special tokens excluded).
struct SpanIndex {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t width() const { return end - start + 1; }
  bool overlaps(const SpanIndex& other) const {
    return start <= other.end && other.start <= end;
  }
  bool operator==(const SpanIndex& other) const {
    return start == other.start && end == other.end;
  }
};

using SpanTable = std::vector<SpanIndex>;

// All (i, j) with i <= j and width <= max_width (0 = unbounded), in
// lexicographic order. n = 0 is rejected. Unbounded tables have
// n(n+1)/2 entries.
SpanTable enumerate_spans(std::size_t n, std::size_t max_width = 0);

// Span representation parameters: h(i,j) = tanh(W1 h_i + W2 h_j
// + W3 (h_i - h_j) + diag(s⊙s)(h_i ⊙ h_j) + bias). The pairwise branch is
// restricted to a diagonal matrix parametrized as diag(s⊙s), which makes the
// "precompute both halves" factorization exact.
template <typename S>
struct SicParamsT {
  TensorT<S> w1, w2, w3;  // [D×D]
  TensorT<S> s;           // [D]
  TensorT<S> bias;        // [D]
};

// Per-position projections shared by all spans: a = H W1^T, b = H W2^T,
// c = H W3^T, p = H ⊙ s (row-wise). O(N·D²) total.
template <typename S>
struct SpanPrecomputeT {
  TensorT<S> a, b, c, p;  // each [N×D]
};

template <typename S>
SpanPrecomputeT<S> precompute(const TensorT<S>& h, const SicParamsT<S>& params);

// One span from the precomputed projections:
// h(i,j) = tanh(a_i + b_j + c_i - c_j + p_i ⊙ p_j + bias). O(D).
template <typename S>
TensorT<S> span_repr_factorized(const SpanPrecomputeT<S>& pre, SpanIndex span,
                                const SicParamsT<S>& params);

// Direct evaluation with per-span matrix-vector products. O(D²) per span;
// test oracle and complexity-benchmark counterpart of the factorized path.
template <typename S>
TensorT<S> span_repr_reference(const TensorT<S>& h, const SicParamsT<S>& params, SpanIndex span);

// All span representations as an [M×D] matrix, row k matching table[k].
// Differentiable end to end; O(N²D) past the shared projections.
template <typename S>
TensorT<S> build_all_spans(const TensorT<S>& h, const SicParamsT<S>& params,
                           const SpanTable& table);

SicParamsT<float> init_sic_params(std::size_t model_dim, Rng& rng);

}  // namespace spanexplain
