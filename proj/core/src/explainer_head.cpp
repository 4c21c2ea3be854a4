#include "spanexplain/explainer_head.hpp"

#include <cmath>

#include "spanexplain/errors.hpp"

namespace spanexplain {

std::string to_string(RegKind kind) {
  return kind == RegKind::squared ? "squared" : "entropy";
}

RegKind reg_kind_from_string(const std::string& name) {
  if (name == "squared") return RegKind::squared;
  if (name == "entropy") return RegKind::entropy;
  throw config_error("unknown regularizer kind \"" + name + "\" (squared|entropy)");
}

template <typename S>
TensorT<S> span_logits(const TensorT<S>& span_reprs, const TensorT<S>& span_scorer) {
  return matvec(span_reprs, span_scorer);
}

template <typename S>
TensorT<S> span_weights(const TensorT<S>& logits) {
  auto alpha = softmax_vec(logits);
  // Weight contract, checked on every forward pass.
  const std::size_t m = alpha.size();
  double total = 0.0, sq = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double v = static_cast<double>(alpha.data()[k]);
    if (v < 0.0) throw contract_error("span_weights: negative weight");
    total += v;
    sq += v * v;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw contract_error("span_weights: weights sum to " + std::to_string(total));
  }
  const double slack = 1e-6;
  if (sq < 1.0 / static_cast<double>(m) - slack || sq > 1.0 + slack) {
    throw contract_error("span_weights: sharpness " + std::to_string(sq) + " outside [1/M, 1]");
  }
  return alpha;
}

template <typename S>
TensorT<S> aggregate(const TensorT<S>& alpha, const TensorT<S>& span_reprs) {
  if (alpha.size() != span_reprs.rows()) {
    throw dimension_error("aggregate: " + std::to_string(alpha.size()) + " weights vs " +
                          std::to_string(span_reprs.rows()) + " span rows");
  }
  return vecmat(alpha, span_reprs);
}

template <typename S>
TensorT<S> class_distribution(const TensorT<S>& pooled, const HeadParamsT<S>& head) {
  auto logits = add(matvec(head.class_weight, pooled), head.class_bias);
  return softmax_vec(logits);
}

template <typename S>
double sharpness(const std::vector<S>& alpha) {
  double acc = 0.0;
  for (S v : alpha) acc += static_cast<double>(v) * static_cast<double>(v);
  return acc;
}

template <typename S>
double entropy_sharpness(const std::vector<S>& alpha) {
  double acc = 0.0;
  for (S v : alpha) {
    const double d = static_cast<double>(v);
    if (d > 0.0) acc -= d * std::log(d);
  }
  return acc;
}

template <typename S>
TensorT<S> objective(const TensorT<S>& probs, std::size_t label, const TensorT<S>& alpha,
                     double lambda, RegKind kind) {
  if (lambda < 0.0) {
    throw config_error("objective: lambda must be non-negative, got " + std::to_string(lambda));
  }
  auto nll = cross_entropy(probs, label);
  if (lambda == 0.0) return nll;
  if (kind == RegKind::squared) {
    // Maximizing log p + λΣα² == minimizing -log p - λΣα².
    return sub(nll, scale(dot(alpha, alpha), S(lambda)));
  }
  return add(nll, scale(entropy(alpha), S(lambda)));
}

template <typename S>
TensorT<S> uniform_explanation(std::size_t m) {
  if (m == 0) throw domain_error("uniform_explanation: span count must be positive");
  return TensorT<S>::full({m}, S(1) / static_cast<S>(m));
}

#define SPANEXPLAIN_INSTANTIATE_HEAD(S)                                                   \
  template struct HeadParamsT<S>;                                                         \
  template TensorT<S> span_logits<S>(const TensorT<S>&, const TensorT<S>&);               \
  template TensorT<S> span_weights<S>(const TensorT<S>&);                                 \
  template TensorT<S> aggregate<S>(const TensorT<S>&, const TensorT<S>&);                 \
  template TensorT<S> class_distribution<S>(const TensorT<S>&, const HeadParamsT<S>&);    \
  template double sharpness<S>(const std::vector<S>&);                                    \
  template double entropy_sharpness<S>(const std::vector<S>&);                            \
  template TensorT<S> objective<S>(const TensorT<S>&, std::size_t, const TensorT<S>&,     \
                                   double, RegKind);                                      \
  template TensorT<S> uniform_explanation<S>(std::size_t);

SPANEXPLAIN_INSTANTIATE_HEAD(float)
SPANEXPLAIN_INSTANTIATE_HEAD(double)

#undef SPANEXPLAIN_INSTANTIATE_HEAD

}  // namespace spanexplain
