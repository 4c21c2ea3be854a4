#include "spanexplain/span_layer.hpp"

#include <cmath>
#include <string>

#include "spanexplain/errors.hpp"

namespace spanexplain {

SpanTable enumerate_spans(std::size_t n, std::size_t max_width) {
  if (n == 0) throw input_error("enumerate_spans: sequence length must be positive");
  SpanTable table;
  if (max_width == 0) {
    table.reserve(n * (n + 1) / 2);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t last = max_width == 0 ? n - 1 : std::min(n - 1, i + max_width - 1);
    for (std::size_t j = i; j <= last; ++j) table.push_back({i, j});
  }
  return table;
}

namespace {

template <typename S>
void check_sic_shapes(const TensorT<S>& h, const SicParamsT<S>& params) {
  const std::size_t d = h.cols();
  if (params.w1.shape() != std::vector<std::size_t>{d, d} ||
      params.w2.shape() != std::vector<std::size_t>{d, d} ||
      params.w3.shape() != std::vector<std::size_t>{d, d} ||
      params.s.shape() != std::vector<std::size_t>{d} ||
      params.bias.shape() != std::vector<std::size_t>{d}) {
    throw dimension_error("span parameters inconsistent with hidden size " + std::to_string(d));
  }
}

// tanh with the same open-interval clamp as tanh_op, so the factorized and
// reference routes round identically.
template <typename S>
S tanh_clamped(S x) {
  static const S open = std::nextafter(S(1), S(0));
  S y = std::tanh(x);
  if (y > open) y = open;
  if (y < -open) y = -open;
  return y;
}

// The fused span kernel. Forward fills row k of the output with
// tanh(a_i + b_j + c_i - c_j + p_i ⊙ p_j + bias) for table[k] = (i, j);
// backward scatters into the projection rows, giving O(N²D) in both
// directions.
template <typename S>
TensorT<S> span_kernel(const TensorT<S>& a, const TensorT<S>& b, const TensorT<S>& c,
                       const TensorT<S>& p, const TensorT<S>& bias, const SpanTable& table) {
  const std::size_t n = a.rows();
  const std::size_t d = a.cols();
  const std::size_t m = table.size();
  for (const auto& span : table) {
    if (span.start > span.end || span.end >= n) {
      throw dimension_error("span (" + std::to_string(span.start) + ", " +
                            std::to_string(span.end) + ") out of bounds for " +
                            std::to_string(n) + " positions");
    }
  }
  TensorT<S> out = TensorT<S>::zeros({m, d});
  const S* av = a.data();
  const S* bv = b.data();
  const S* cv = c.data();
  const S* pv = p.data();
  const S* biasv = bias.data();
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = table[k].start, j = table[k].end;
    S* row = out.data() + k * d;
    const S* ai = av + i * d;
    const S* bj = bv + j * d;
    const S* ci = cv + i * d;
    const S* cj = cv + j * d;
    const S* pi = pv + i * d;
    const S* pj = pv + j * d;
    for (std::size_t t = 0; t < d; ++t) {
      row[t] = tanh_clamped(ai[t] + bj[t] + ci[t] - cj[t] + pi[t] * pj[t] + biasv[t]);
    }
  }

  auto* tape = GradTapeT<S>::active();
  const bool needs = a.requires_grad() || b.requires_grad() || c.requires_grad() ||
                     p.requires_grad() || bias.requires_grad();
  if (tape && needs) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), cn = c.node(), pn = p.node(), biasn = bias.node();
    auto on = out.node();
    auto spans = table;
    tape->record(on, [an, bn, cn, pn, biasn, on, spans, d]() {
      if (on->grad.empty()) return;
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      if (cn->requires_grad) cn->ensure_grad();
      if (pn->requires_grad) pn->ensure_grad();
      if (biasn->requires_grad) biasn->ensure_grad();
      for (std::size_t k = 0; k < spans.size(); ++k) {
        const std::size_t i = spans[k].start, j = spans[k].end;
        const S* g = on->grad.data() + k * d;
        const S* y = on->value.data() + k * d;
        for (std::size_t t = 0; t < d; ++t) {
          const S gz = g[t] * (S(1) - y[t] * y[t]);
          if (gz == S(0)) continue;
          if (an->requires_grad) an->grad[i * d + t] += gz;
          if (bn->requires_grad) bn->grad[j * d + t] += gz;
          if (cn->requires_grad) {
            cn->grad[i * d + t] += gz;
            cn->grad[j * d + t] -= gz;
          }
          if (pn->requires_grad) {
            pn->grad[i * d + t] += gz * pn->value[j * d + t];
            pn->grad[j * d + t] += gz * pn->value[i * d + t];
          }
          if (biasn->requires_grad) biasn->grad[t] += gz;
        }
      }
    });
  }
  return out;
}

}  // namespace

template <typename S>
SpanPrecomputeT<S> precompute(const TensorT<S>& h, const SicParamsT<S>& params) {
  check_sic_shapes(h, params);
  SpanPrecomputeT<S> pre;
  pre.a = matmul_nt(h, params.w1);
  pre.b = matmul_nt(h, params.w2);
  pre.c = matmul_nt(h, params.w3);
  pre.p = mul_rowwise(h, params.s);
  return pre;
}

template <typename S>
TensorT<S> span_repr_factorized(const SpanPrecomputeT<S>& pre, SpanIndex span,
                                const SicParamsT<S>& params) {
  const std::size_t n = pre.a.rows();
  const std::size_t d = pre.a.cols();
  if (span.start > span.end || span.end >= n) {
    throw dimension_error("span (" + std::to_string(span.start) + ", " +
                          std::to_string(span.end) + ") out of bounds for " + std::to_string(n) +
                          " positions");
  }
  const std::size_t i = span.start, j = span.end;
  TensorT<S> out = TensorT<S>::zeros({d});
  for (std::size_t t = 0; t < d; ++t) {
    out.data()[t] = tanh_clamped(pre.a.at(i, t) + pre.b.at(j, t) + pre.c.at(i, t) -
                                 pre.c.at(j, t) + pre.p.at(i, t) * pre.p.at(j, t) +
                                 params.bias.at(t));
  }
  return out;
}

template <typename S>
TensorT<S> span_repr_reference(const TensorT<S>& h, const SicParamsT<S>& params, SpanIndex span) {
  check_sic_shapes(h, params);
  const std::size_t n = h.rows();
  const std::size_t d = h.cols();
  if (span.start > span.end || span.end >= n) {
    throw dimension_error("span (" + std::to_string(span.start) + ", " +
                          std::to_string(span.end) + ") out of bounds for " + std::to_string(n) +
                          " positions");
  }
  const S* hi = h.data() + span.start * d;
  const S* hj = h.data() + span.end * d;
  TensorT<S> out = TensorT<S>::zeros({d});
  for (std::size_t r = 0; r < d; ++r) {
    S acc = params.bias.at(r);
    const S* w1r = params.w1.data() + r * d;
    const S* w2r = params.w2.data() + r * d;
    const S* w3r = params.w3.data() + r * d;
    for (std::size_t t = 0; t < d; ++t) {
      acc += w1r[t] * hi[t] + w2r[t] * hj[t] + w3r[t] * (hi[t] - hj[t]);
    }
    const S sr = params.s.at(r);
    acc += sr * sr * (hi[r] * hj[r]);
    out.data()[r] = tanh_clamped(acc);
  }
  return out;
}

template <typename S>
TensorT<S> build_all_spans(const TensorT<S>& h, const SicParamsT<S>& params,
                           const SpanTable& table) {
  auto pre = precompute(h, params);
  return span_kernel(pre.a, pre.b, pre.c, pre.p, params.bias, table);
}

SicParamsT<float> init_sic_params(std::size_t model_dim, Rng& rng) {
  SicParamsT<float> p;
  const float limit = 1.0f / std::sqrt(static_cast<float>(model_dim));
  auto init = [&](std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-limit, limit);
    t.set_requires_grad(true);
    return t;
  };
  p.w1 = init({model_dim, model_dim});
  p.w2 = init({model_dim, model_dim});
  p.w3 = init({model_dim, model_dim});
  p.s = Tensor::ones({model_dim}).set_requires_grad(true);
  p.bias = Tensor::zeros({model_dim}).set_requires_grad(true);
  return p;
}

#define SPANEXPLAIN_INSTANTIATE_SPAN(S)                                                       \
  template struct SicParamsT<S>;                                                              \
  template struct SpanPrecomputeT<S>;                                                         \
  template SpanPrecomputeT<S> precompute<S>(const TensorT<S>&, const SicParamsT<S>&);         \
  template TensorT<S> span_repr_factorized<S>(const SpanPrecomputeT<S>&, SpanIndex,           \
                                              const SicParamsT<S>&);                          \
  template TensorT<S> span_repr_reference<S>(const TensorT<S>&, const SicParamsT<S>&,         \
                                             SpanIndex);                                      \
  template TensorT<S> build_all_spans<S>(const TensorT<S>&, const SicParamsT<S>&,             \
                                         const SpanTable&);

SPANEXPLAIN_INSTANTIATE_SPAN(float)
SPANEXPLAIN_INSTANTIATE_SPAN(double)

#undef SPANEXPLAIN_INSTANTIATE_SPAN

}  // namespace spanexplain
