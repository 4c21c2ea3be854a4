#include "spanexplain/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace spanexplain {

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

template <typename S>
void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw dimension_error(std::string(op) + ": operand shapes differ, " +
                          shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <typename S>
void check_matrix(const TensorT<S>& t, const char* op) {
  if (t.ndim() != 2) {
    throw dimension_error(std::string(op) + ": expected a matrix, got shape " +
                          shape_string(t.shape()));
  }
}

template <typename S>
void check_vector(const TensorT<S>& t, const char* op) {
  if (t.ndim() != 1) {
    throw dimension_error(std::string(op) + ": expected a vector, got shape " +
                          shape_string(t.shape()));
  }
}

template <typename S>
thread_local GradTapeT<S>* g_active_tape = nullptr;

}  // namespace

// ---------------------------------------------------------------------------
// TensorT
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> TensorT<S>::zeros(std::vector<std::size_t> shape) {
  TensorT t;
  t.data_->value.assign(shape_product(shape), S(0));
  t.data_->shape = std::move(shape);
  return t;
}

template <typename S>
TensorT<S> TensorT<S>::full(std::vector<std::size_t> shape, S fill) {
  TensorT t;
  t.data_->value.assign(shape_product(shape), fill);
  t.data_->shape = std::move(shape);
  return t;
}

template <typename S>
TensorT<S> TensorT<S>::from(std::vector<std::size_t> shape, std::vector<S> values) {
  if (shape_product(shape) != values.size()) {
    throw dimension_error("Tensor::from: shape " + shape_string(shape) + " needs " +
                          std::to_string(shape_product(shape)) + " values, got " +
                          std::to_string(values.size()));
  }
  TensorT t;
  t.data_->shape = std::move(shape);
  t.data_->value = std::move(values);
  return t;
}

template <typename S>
std::size_t TensorT<S>::rows() const {
  if (ndim() != 2) throw contract_error("rows(): tensor is not a matrix");
  return data_->shape[0];
}

template <typename S>
std::size_t TensorT<S>::cols() const {
  if (ndim() != 2) throw contract_error("cols(): tensor is not a matrix");
  return data_->shape[1];
}

template <typename S>
S TensorT<S>::item() const {
  if (size() != 1) {
    throw contract_error("item(): tensor has " + std::to_string(size()) + " elements");
  }
  return data_->value[0];
}

template <typename S>
const std::vector<S>& TensorT<S>::grad() const {
  if (data_->grad.empty()) {
    throw contract_error("grad(): gradient not computed; run backward() first");
  }
  return data_->grad;
}

template <typename S>
TensorT<S> TensorT<S>::clone() const {
  TensorT t;
  t.data_->shape = data_->shape;
  t.data_->value = data_->value;
  t.data_->requires_grad = data_->requires_grad;
  return t;
}

// ---------------------------------------------------------------------------
// GradTapeT
// ---------------------------------------------------------------------------

template <typename S>
GradTapeT<S>::GradTapeT() {
  prev_ = g_active_tape<S>;
  g_active_tape<S> = this;
}

template <typename S>
GradTapeT<S>::~GradTapeT() {
  g_active_tape<S> = prev_;
}

template <typename S>
GradTapeT<S>* GradTapeT<S>::active() {
  return g_active_tape<S>;
}

template <typename S>
void GradTapeT<S>::record(std::shared_ptr<TensorData<S>> output, std::function<void()> backward) {
  steps_.push_back(Step{std::move(output), std::move(backward)});
}

template <typename S>
void GradTapeT<S>::backward(const TensorT<S>& loss) {
  if (loss.size() != 1) {
    throw contract_error("backward: loss must be a scalar, got shape " +
                         shape_string(loss.shape()));
  }
  // Intermediate gradients are per-call scratch; leaf gradients accumulate
  // across calls until explicitly zeroed.
  for (auto& step : steps_) step.output->grad.clear();
  auto ln = loss.node();
  ln->ensure_grad();
  ln->grad[0] += S(1);
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    it->backward();
  }
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace {

template <typename S>
bool tape_wants(const TensorT<S>& a) {
  return g_active_tape<S> != nullptr && a.requires_grad();
}

template <typename S>
bool tape_wants(const TensorT<S>& a, const TensorT<S>& b) {
  return g_active_tape<S> != nullptr && (a.requires_grad() || b.requires_grad());
}

template <typename S>
bool tape_wants(const TensorT<S>& a, const TensorT<S>& b, const TensorT<S>& c) {
  return g_active_tape<S> != nullptr &&
         (a.requires_grad() || b.requires_grad() || c.requires_grad());
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw dimension_error("matmul: inner dimensions differ, " + shape_string(a.shape()) +
                          " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  TensorT<S> out = TensorT<S>::zeros({m, n});
  const S* av = a.data();
  const S* bv = b.data();
  S* ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const S aip = av[i * k + p];
      const S* brow = bv + p * n;
      S* orow = ov + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  if (tape_wants(a, b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, bn, on, m, k, n]() {
      if (on->grad.empty()) return;
      const S* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        // dA = G · B^T
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            S acc = S(0);
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bn->value[p * n + j];
            an->grad[i * k + p] += acc;
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // dB = A^T · G
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const S aip = an->value[i * k + p];
            for (std::size_t j = 0; j < n; ++j) bn->grad[p * n + j] += aip * g[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  check_matrix(a, "matmul_nt");
  check_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw dimension_error("matmul_nt: inner dimensions differ, " + shape_string(a.shape()) +
                          " x " + shape_string(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  TensorT<S> out = TensorT<S>::zeros({m, n});
  const S* av = a.data();
  const S* bv = b.data();
  S* ov = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = av + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const S* brow = bv + j * k;
      S acc = S(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      ov[i * n + j] = acc;
    }
  }
  if (tape_wants(a, b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, bn, on, m, k, n]() {
      if (on->grad.empty()) return;
      const S* g = on->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        // out = A·B^T  =>  dA = G · B
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const S gij = g[i * n + j];
            const S* brow = bn->value.data() + j * k;
            S* arow = an->grad.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) arow[p] += gij * brow[p];
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // dB = G^T · A
        for (std::size_t i = 0; i < m; ++i) {
          const S* arow = an->value.data() + i * k;
          for (std::size_t j = 0; j < n; ++j) {
            const S gij = g[i * n + j];
            S* brow = bn->grad.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) brow[p] += gij * arow[p];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "add");
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tape_wants(a, b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, bn, on, n]() {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "sub");
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (tape_wants(a, b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, bn, on, n]() {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> hadamard(const TensorT<S>& a, const TensorT<S>& b) {
  check_same_shape(a, b, "hadamard");
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tape_wants(a, b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, bn, on, n]() {
      if (on->grad.empty()) return;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S factor) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
  if (tape_wants(a)) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, on, n, factor]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * factor;
    });
  }
  return out;
}

template <typename S>
TensorT<S> tanh_op(const TensorT<S>& a) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const std::size_t n = a.size();
  // Keep outputs strictly inside (-1, 1); std::tanh rounds to ±1 for large
  // arguments.
  const S open = std::nextafter(S(1), S(0));
  for (std::size_t i = 0; i < n; ++i) {
    S y = std::tanh(a.data()[i]);
    if (y > open) y = open;
    if (y < -open) y = -open;
    out.data()[i] = y;
  }
  if (tape_wants(a)) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, on, n]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const S y = on->value[i];
        an->grad[i] += on->grad[i] * (S(1) - y * y);
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > S(0) ? a.data()[i] : S(0);
  if (tape_wants(a)) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, on, n]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        if (an->value[i] > S(0)) an->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row-wise broadcasting
// ---------------------------------------------------------------------------

namespace {

template <typename S>
void check_rowwise(const TensorT<S>& m, const TensorT<S>& v, const char* op) {
  check_matrix(m, op);
  check_vector(v, op);
  if (m.cols() != v.size()) {
    throw dimension_error(std::string(op) + ": matrix " + shape_string(m.shape()) +
                          " vs vector " + shape_string(v.shape()));
  }
}

}  // namespace

template <typename S>
TensorT<S> add_rowwise(const TensorT<S>& m, const TensorT<S>& v) {
  check_rowwise(m, v, "add_rowwise");
  const std::size_t r = m.rows(), c = m.cols();
  TensorT<S> out = TensorT<S>::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] = m.data()[i * c + j] + v.data()[j];
  if (tape_wants(m, v)) {
    out.set_requires_grad(true);
    auto mn = m.node(), vn = v.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [mn, vn, on, r, c]() {
      if (on->grad.empty()) return;
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < r * c; ++i) mn->grad[i] += on->grad[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) vn->grad[j] += on->grad[i * c + j];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> mul_rowwise(const TensorT<S>& m, const TensorT<S>& v) {
  check_rowwise(m, v, "mul_rowwise");
  const std::size_t r = m.rows(), c = m.cols();
  TensorT<S> out = TensorT<S>::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] = m.data()[i * c + j] * v.data()[j];
  if (tape_wants(m, v)) {
    out.set_requires_grad(true);
    auto mn = m.node(), vn = v.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [mn, vn, on, r, c]() {
      if (on->grad.empty()) return;
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            mn->grad[i * c + j] += on->grad[i * c + j] * vn->value[j];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            vn->grad[j] += on->grad[i * c + j] * mn->value[i * c + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix-vector products and reductions
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matvec(const TensorT<S>& m, const TensorT<S>& v) {
  check_rowwise(m, v, "matvec");
  const std::size_t r = m.rows(), c = m.cols();
  TensorT<S> out = TensorT<S>::zeros({r});
  for (std::size_t i = 0; i < r; ++i) {
    S acc = S(0);
    for (std::size_t j = 0; j < c; ++j) acc += m.data()[i * c + j] * v.data()[j];
    out.data()[i] = acc;
  }
  if (tape_wants(m, v)) {
    out.set_requires_grad(true);
    auto mn = m.node(), vn = v.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [mn, vn, on, r, c]() {
      if (on->grad.empty()) return;
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) mn->grad[i * c + j] += on->grad[i] * vn->value[j];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) vn->grad[j] += on->grad[i] * mn->value[i * c + j];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> vecmat(const TensorT<S>& v, const TensorT<S>& m) {
  check_matrix(m, "vecmat");
  check_vector(v, "vecmat");
  if (m.rows() != v.size()) {
    throw dimension_error("vecmat: vector " + shape_string(v.shape()) + " vs matrix " +
                          shape_string(m.shape()));
  }
  const std::size_t r = m.rows(), c = m.cols();
  TensorT<S> out = TensorT<S>::zeros({c});
  for (std::size_t i = 0; i < r; ++i) {
    const S vi = v.data()[i];
    for (std::size_t j = 0; j < c; ++j) out.data()[j] += vi * m.data()[i * c + j];
  }
  if (tape_wants(v, m)) {
    out.set_requires_grad(true);
    auto vn = v.node(), mn = m.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [vn, mn, on, r, c]() {
      if (on->grad.empty()) return;
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i) {
          S acc = S(0);
          for (std::size_t j = 0; j < c; ++j) acc += on->grad[j] * mn->value[i * c + j];
          vn->grad[i] += acc;
        }
      }
      if (mn->requires_grad) {
        mn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) mn->grad[i * c + j] += vn->value[i] * on->grad[j];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> dot(const TensorT<S>& a, const TensorT<S>& b) {
  check_vector(a, "dot");
  check_vector(b, "dot");
  check_same_shape(a, b, "dot");
  const std::size_t n = a.size();
  S acc = S(0);
  for (std::size_t i = 0; i < n; ++i) acc += a.data()[i] * b.data()[i];
  TensorT<S> out = TensorT<S>::scalar(acc);
  if (tape_wants(a, b)) {
    out.set_requires_grad(true);
    auto an = a.node(), bn = b.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, bn, on, n]() {
      if (on->grad.empty()) return;
      const S g = on->grad[0];
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += g * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += g * an->value[i];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
  S acc = S(0);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) acc += a.data()[i];
  TensorT<S> out = TensorT<S>::scalar(acc);
  if (tape_wants(a)) {
    out.set_requires_grad(true);
    auto an = a.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [an, on, n]() {
      if (on->grad.empty()) return;
      an->ensure_grad();
      const S g = on->grad[0];
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += g;
    });
  }
  return out;
}

template <typename S>
TensorT<S> select(const TensorT<S>& v, std::size_t index) {
  check_vector(v, "select");
  if (index >= v.size()) {
    throw domain_error("select: index " + std::to_string(index) + " out of range for " +
                       shape_string(v.shape()));
  }
  TensorT<S> out = TensorT<S>::scalar(v.data()[index]);
  if (tape_wants(v)) {
    out.set_requires_grad(true);
    auto vn = v.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [vn, on, index]() {
      if (on->grad.empty()) return;
      vn->ensure_grad();
      vn->grad[index] += on->grad[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / losses / normalization
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> softmax_vec(const TensorT<S>& logits) {
  check_vector(logits, "softmax_vec");
  const std::size_t n = logits.size();
  if (n == 0) throw domain_error("softmax_vec: empty input");
  S mx = logits.data()[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits.data()[i]);
  TensorT<S> out = TensorT<S>::zeros({n});
  S total = S(0);
  for (std::size_t i = 0; i < n; ++i) {
    const S e = std::exp(logits.data()[i] - mx);
    out.data()[i] = e;
    total += e;
  }
  const S inv = S(1) / total;
  for (std::size_t i = 0; i < n; ++i) out.data()[i] *= inv;
  if (tape_wants(logits)) {
    out.set_requires_grad(true);
    auto ln = logits.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [ln, on, n]() {
      if (on->grad.empty()) return;
      ln->ensure_grad();
      S inner = S(0);
      for (std::size_t i = 0; i < n; ++i) inner += on->grad[i] * on->value[i];
      for (std::size_t i = 0; i < n; ++i)
        ln->grad[i] += on->value[i] * (on->grad[i] - inner);
    });
  }
  return out;
}

template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& p, std::size_t label) {
  check_vector(p, "cross_entropy");
  if (label >= p.size()) {
    throw domain_error("cross_entropy: label " + std::to_string(label) +
                       " out of range for " + std::to_string(p.size()) + " classes");
  }
  const S clamp = S(1e-12);
  const S py = std::max(p.data()[label], clamp);
  TensorT<S> out = TensorT<S>::scalar(-std::log(py));
  if (tape_wants(p)) {
    out.set_requires_grad(true);
    auto pn = p.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [pn, on, label, clamp]() {
      if (on->grad.empty()) return;
      pn->ensure_grad();
      const S pv = pn->value[label];
      if (pv > clamp) pn->grad[label] += on->grad[0] * (S(-1) / pv);
      // Inside the clamp region the loss is constant in p[label].
    });
  }
  return out;
}

template <typename S>
TensorT<S> entropy(const TensorT<S>& p) {
  check_vector(p, "entropy");
  const std::size_t n = p.size();
  S acc = S(0);
  for (std::size_t i = 0; i < n; ++i) {
    const S v = p.data()[i];
    if (v > S(0)) acc -= v * std::log(v);
  }
  TensorT<S> out = TensorT<S>::scalar(acc);
  if (tape_wants(p)) {
    out.set_requires_grad(true);
    auto pn = p.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [pn, on, n]() {
      if (on->grad.empty()) return;
      pn->ensure_grad();
      const S g = on->grad[0];
      for (std::size_t i = 0; i < n; ++i) {
        const S v = pn->value[i];
        if (v > S(0)) pn->grad[i] += g * (-(std::log(v) + S(1)));
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias) {
  if (x.ndim() != 1 && x.ndim() != 2) {
    throw dimension_error("layer_norm: expected vector or matrix, got " +
                          shape_string(x.shape()));
  }
  const std::size_t d = x.ndim() == 1 ? x.shape()[0] : x.shape()[1];
  const std::size_t r = x.ndim() == 1 ? 1 : x.shape()[0];
  if (d < 2) throw domain_error("layer_norm: feature dimension must be >= 2, got " +
                                std::to_string(d));
  check_vector(gain, "layer_norm");
  check_vector(bias, "layer_norm");
  if (gain.size() != d || bias.size() != d) {
    throw dimension_error("layer_norm: gain/bias length " + std::to_string(gain.size()) +
                          "/" + std::to_string(bias.size()) + " vs feature dim " +
                          std::to_string(d));
  }

  const S eps = S(1e-5);
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  // Normalized rows and inverse stddevs are needed again in backward.
  auto xhat = std::make_shared<std::vector<S>>(r * d);
  auto inv_std = std::make_shared<std::vector<S>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const S* xv = x.data() + i * d;
    S mean = S(0);
    for (std::size_t j = 0; j < d; ++j) mean += xv[j];
    mean /= S(d);
    S var = S(0);
    for (std::size_t j = 0; j < d; ++j) {
      const S c = xv[j] - mean;
      var += c * c;
    }
    var /= S(d);
    const S inv = S(1) / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const S h = (xv[j] - mean) * inv;
      (*xhat)[i * d + j] = h;
      out.data()[i * d + j] = gain.data()[j] * h + bias.data()[j];
    }
  }
  if (tape_wants(x, gain, bias)) {
    out.set_requires_grad(true);
    auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [xn, gn, bn, on, xhat, inv_std, r, d]() {
      if (on->grad.empty()) return;
      const S* g = on->grad.data();
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < d; ++j) gn->grad[j] += g[i * d + j] * (*xhat)[i * d + j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < d; ++j) bn->grad[j] += g[i * d + j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        std::vector<S> gd(d);
        for (std::size_t i = 0; i < r; ++i) {
          S mean_gd = S(0), mean_gdx = S(0);
          for (std::size_t j = 0; j < d; ++j) {
            gd[j] = g[i * d + j] * gn->value[j];
            mean_gd += gd[j];
            mean_gdx += gd[j] * (*xhat)[i * d + j];
          }
          mean_gd /= S(d);
          mean_gdx /= S(d);
          const S inv = (*inv_std)[i];
          for (std::size_t j = 0; j < d; ++j) {
            xn->grad[i * d + j] +=
                inv * (gd[j] - mean_gd - (*xhat)[i * d + j] * mean_gdx);
          }
        }
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> masked_row_softmax(const TensorT<S>& scores, const std::vector<std::uint8_t>& key_mask) {
  check_matrix(scores, "masked_row_softmax");
  const std::size_t r = scores.rows(), c = scores.cols();
  if (key_mask.size() != c) {
    throw dimension_error("masked_row_softmax: mask length " + std::to_string(key_mask.size()) +
                          " vs " + std::to_string(c) + " columns");
  }
  bool any = false;
  for (auto m : key_mask) any = any || (m != 0);
  if (!any) throw domain_error("masked_row_softmax: all key positions masked");

  TensorT<S> out = TensorT<S>::zeros({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const S* sv = scores.data() + i * c;
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (key_mask[j]) mx = std::max(mx, sv[j]);
    S total = S(0);
    for (std::size_t j = 0; j < c; ++j) {
      if (!key_mask[j]) continue;
      const S e = std::exp(sv[j] - mx);
      out.data()[i * c + j] = e;
      total += e;
    }
    const S inv = S(1) / total;
    for (std::size_t j = 0; j < c; ++j)
      if (key_mask[j]) out.data()[i * c + j] *= inv;
  }
  if (tape_wants(scores)) {
    out.set_requires_grad(true);
    auto sn = scores.node(), on = out.node();
    auto mask = key_mask;
    GradTapeT<S>::active()->record(on, [sn, on, mask, r, c]() {
      if (on->grad.empty()) return;
      sn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        S inner = S(0);
        for (std::size_t j = 0; j < c; ++j)
          if (mask[j]) inner += on->grad[i * c + j] * on->value[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          if (!mask[j]) continue;
          sn->grad[i * c + j] += on->value[i * c + j] * (on->grad[i * c + j] - inner);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gather / slice / concat
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> gather_rows(const TensorT<S>& m, const std::vector<std::size_t>& indices) {
  check_matrix(m, "gather_rows");
  const std::size_t r = m.rows(), c = m.cols();
  for (std::size_t idx : indices) {
    if (idx >= r) {
      throw dimension_error("gather_rows: row index " + std::to_string(idx) +
                            " out of range for " + shape_string(m.shape()));
    }
  }
  const std::size_t n = indices.size();
  TensorT<S> out = TensorT<S>::zeros({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const S* src = m.data() + indices[i] * c;
    std::copy(src, src + c, out.data() + i * c);
  }
  if (tape_wants(m)) {
    out.set_requires_grad(true);
    auto mn = m.node(), on = out.node();
    auto idx = indices;
    GradTapeT<S>::active()->record(on, [mn, on, idx, c]() {
      if (on->grad.empty()) return;
      mn->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        S* dst = mn->grad.data() + idx[i] * c;
        const S* g = on->grad.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> slice_rows(const TensorT<S>& m, std::size_t r0, std::size_t r1) {
  check_matrix(m, "slice_rows");
  if (r0 > r1 || r1 > m.rows()) {
    throw dimension_error("slice_rows: range [" + std::to_string(r0) + ", " +
                          std::to_string(r1) + ") invalid for " + shape_string(m.shape()));
  }
  std::vector<std::size_t> idx(r1 - r0);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = r0 + i;
  return gather_rows(m, idx);
}

template <typename S>
TensorT<S> slice_cols(const TensorT<S>& m, std::size_t c0, std::size_t c1) {
  check_matrix(m, "slice_cols");
  if (c0 > c1 || c1 > m.cols()) {
    throw dimension_error("slice_cols: range [" + std::to_string(c0) + ", " +
                          std::to_string(c1) + ") invalid for " + shape_string(m.shape()));
  }
  const std::size_t r = m.rows(), c = m.cols(), w = c1 - c0;
  TensorT<S> out = TensorT<S>::zeros({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out.data()[i * w + j] = m.data()[i * c + c0 + j];
  if (tape_wants(m)) {
    out.set_requires_grad(true);
    auto mn = m.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [mn, on, r, c, c0, w]() {
      if (on->grad.empty()) return;
      mn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) mn->grad[i * c + c0 + j] += on->grad[i * w + j];
    });
  }
  return out;
}

template <typename S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw dimension_error("concat_cols: no operands");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    check_matrix(p, "concat_cols");
    if (p.rows() != r) {
      throw dimension_error("concat_cols: row counts differ, " + std::to_string(r) + " vs " +
                            std::to_string(p.rows()));
    }
    total += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  TensorT<S> out = TensorT<S>::zeros({r, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out.data()[i * total + off + j] = p.data()[i * w + j];
    off += w;
  }
  if (GradTapeT<S>::active() && needs_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<S>>> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    GradTapeT<S>::active()->record(on, [nodes, on, r, total]() {
      if (on->grad.empty()) return;
      std::size_t off = 0;
      for (auto& pn : nodes) {
        const std::size_t w = pn->shape[1];
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j)
              pn->grad[i * w + j] += on->grad[i * total + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

template <typename S>
TensorT<S> dropout(const TensorT<S>& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw config_error("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  const std::size_t n = x.size();
  const S keep_scale = S(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<S>>(n);
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const S m = rng.uniform01d() >= rate ? keep_scale : S(0);
    (*mask)[i] = m;
    out.data()[i] = x.data()[i] * m;
  }
  if (tape_wants(x)) {
    out.set_requires_grad(true);
    auto xn = x.node(), on = out.node();
    GradTapeT<S>::active()->record(on, [xn, on, mask, n]() {
      if (on->grad.empty()) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] * (*mask)[i];
    });
  }
  return out;
}

template <typename S>
std::size_t argmax(const TensorT<S>& v) {
  if (v.size() == 0) throw domain_error("argmax: empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v.data()[i] > v.data()[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Explicit instantiations (float for the model path, double for test oracles)
// ---------------------------------------------------------------------------

#define SPANEXPLAIN_INSTANTIATE_TENSOR(S)                                                    \
  template struct TensorData<S>;                                                             \
  template class TensorT<S>;                                                                 \
  template class GradTapeT<S>;                                                               \
  template TensorT<S> matmul<S>(const TensorT<S>&, const TensorT<S>&);                       \
  template TensorT<S> matmul_nt<S>(const TensorT<S>&, const TensorT<S>&);                    \
  template TensorT<S> add<S>(const TensorT<S>&, const TensorT<S>&);                          \
  template TensorT<S> sub<S>(const TensorT<S>&, const TensorT<S>&);                          \
  template TensorT<S> hadamard<S>(const TensorT<S>&, const TensorT<S>&);                     \
  template TensorT<S> scale<S>(const TensorT<S>&, S);                                        \
  template TensorT<S> tanh_op<S>(const TensorT<S>&);                                         \
  template TensorT<S> relu<S>(const TensorT<S>&);                                            \
  template TensorT<S> add_rowwise<S>(const TensorT<S>&, const TensorT<S>&);                  \
  template TensorT<S> mul_rowwise<S>(const TensorT<S>&, const TensorT<S>&);                  \
  template TensorT<S> matvec<S>(const TensorT<S>&, const TensorT<S>&);                       \
  template TensorT<S> vecmat<S>(const TensorT<S>&, const TensorT<S>&);                       \
  template TensorT<S> dot<S>(const TensorT<S>&, const TensorT<S>&);                          \
  template TensorT<S> sum<S>(const TensorT<S>&);                                             \
  template TensorT<S> select<S>(const TensorT<S>&, std::size_t);                             \
  template TensorT<S> softmax_vec<S>(const TensorT<S>&);                                     \
  template TensorT<S> cross_entropy<S>(const TensorT<S>&, std::size_t);                      \
  template TensorT<S> entropy<S>(const TensorT<S>&);                                         \
  template TensorT<S> layer_norm<S>(const TensorT<S>&, const TensorT<S>&, const TensorT<S>&); \
  template TensorT<S> masked_row_softmax<S>(const TensorT<S>&, const std::vector<std::uint8_t>&); \
  template TensorT<S> gather_rows<S>(const TensorT<S>&, const std::vector<std::size_t>&);    \
  template TensorT<S> slice_rows<S>(const TensorT<S>&, std::size_t, std::size_t);            \
  template TensorT<S> slice_cols<S>(const TensorT<S>&, std::size_t, std::size_t);            \
  template TensorT<S> concat_cols<S>(const std::vector<TensorT<S>>&);                        \
  template TensorT<S> dropout<S>(const TensorT<S>&, double, Rng&);                           \
  template std::size_t argmax<S>(const TensorT<S>&);

SPANEXPLAIN_INSTANTIATE_TENSOR(float)
SPANEXPLAIN_INSTANTIATE_TENSOR(double)

#undef SPANEXPLAIN_INSTANTIATE_TENSOR

}  // namespace spanexplain
