// Finite-difference oracles shared by the test suites. These stay
// independent of the tape: they only re-run forward evaluations.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "spanexplain/tensor.hpp"

namespace sx_test {

// Central differences of a scalar-valued forward() w.r.t. one tensor's
// entries. forward() must re-read x on every call.
template <typename S, typename F>
std::vector<double> central_diff(spanexplain::TensorT<S>& x, F&& forward, double h) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S keep = x.data()[i];
    x.data()[i] = static_cast<S>(static_cast<double>(keep) + h);
    const double up = forward();
    x.data()[i] = static_cast<S>(static_cast<double>(keep) - h);
    const double down = forward();
    x.data()[i] = keep;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// Max relative error over entries where either side is above the threshold.
template <typename A>
double max_rel_error(const std::vector<A>& autodiff, const std::vector<double>& reference,
                     double threshold = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < autodiff.size(); ++i) {
    const double a = static_cast<double>(autodiff[i]);
    const double b = reference[i];
    if (std::max(std::abs(a), std::abs(b)) <= threshold) continue;
    worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), std::abs(b)));
  }
  return worst;
}

}  // namespace sx_test
