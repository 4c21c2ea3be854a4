#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "spanexplain/errors.hpp"
#include "spanexplain/rng.hpp"

namespace spanexplain {

// Dense row-major tensor storage plus its gradient buffer. Shared between
// the value-semantic TensorT handles and the backward closures on the tape.
template <typename S>
struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::size_t size() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <typename S>
class GradTapeT;

// Handle over shared tensor storage. Copies alias the same data, which is
// what the tape's backward closures rely on.
template <typename S>
class TensorT {
 public:
  TensorT() : data_(std::make_shared<TensorData<S>>()) {}

  static TensorT zeros(std::vector<std::size_t> shape);
  static TensorT full(std::vector<std::size_t> shape, S fill);
  static TensorT ones(std::vector<std::size_t> shape) {
    return full(std::move(shape), S(1));
  }
  static TensorT scalar(S value) { return full({1}, value); }
  static TensorT from(std::vector<std::size_t> shape, std::vector<S> values);

  const std::vector<std::size_t>& shape() const { return data_->shape; }
  std::size_t size() const { return data_->value.size(); }
  std::size_t ndim() const { return data_->shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_scalar() const { return size() == 1 && ndim() == 1; }

  S* data() { return data_->value.data(); }
  const S* data() const { return data_->value.data(); }
  std::vector<S>& values() { return data_->value; }
  const std::vector<S>& values() const { return data_->value; }

  S& at(std::size_t i) { return data_->value[i]; }
  S at(std::size_t i) const { return data_->value[i]; }
  S& at(std::size_t r, std::size_t c) { return data_->value[r * cols() + c]; }
  S at(std::size_t r, std::size_t c) const { return data_->value[r * cols() + c]; }
  S item() const;

  bool requires_grad() const { return data_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    data_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !data_->grad.empty(); }
  const std::vector<S>& grad() const;
  std::vector<S>& mutable_grad() {
    data_->ensure_grad();
    return data_->grad;
  }
  void zero_grad() { data_->grad.assign(data_->value.size(), S(0)); }
  void clear_grad() { data_->grad.clear(); }

  TensorT clone() const;

  std::shared_ptr<TensorData<S>> node() const { return data_; }

 private:
  explicit TensorT(std::shared_ptr<TensorData<S>> d) : data_(std::move(d)) {}
  std::shared_ptr<TensorData<S>> data_;

  template <typename T>
  friend class GradTapeT;
};

// Reverse-mode tape. Records one backward closure per primitive in forward
// execution order; backward() replays them in reverse, which visits every
// node exactly once. One tape per thread may be active at a time; creating
// a tape activates it for ops run on the same thread.
//
// Gradient accumulation is strictly in recording order, so repeated
// backward() calls without zero_grad() add deterministic whole passes into
// leaf gradients.
template <typename S>
class GradTapeT {
 public:
  GradTapeT();
  ~GradTapeT();
  GradTapeT(const GradTapeT&) = delete;
  GradTapeT& operator=(const GradTapeT&) = delete;

  static GradTapeT* active();

  void record(std::shared_ptr<TensorData<S>> output, std::function<void()> backward);

  // loss must be a scalar produced by recorded primitives (or a leaf).
  void backward(const TensorT<S>& loss);

  std::size_t num_ops() const { return steps_.size(); }

 private:
  struct Step {
    std::shared_ptr<TensorData<S>> output;
    std::function<void()> backward;
  };
  std::vector<Step> steps_;
  GradTapeT* prev_ = nullptr;
};

// ---------------------------------------------------------------------------
// Primitive operations. Each computes its forward value eagerly and, when a
// tape is active and an input requires grad, records a backward closure.
// With no active tape they run forward-only (inference mode).
// ---------------------------------------------------------------------------

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b);

// a[m×k] · b[n×k]^T -> [m×n]; saves an explicit transpose in attention and
// in the x·W^T projection convention (weights stored [out×in]).
template <typename S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b);

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b);
template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b);
template <typename S>
TensorT<S> hadamard(const TensorT<S>& a, const TensorT<S>& b);
template <typename S>
TensorT<S> scale(const TensorT<S>& a, S factor);
template <typename S>
TensorT<S> tanh_op(const TensorT<S>& a);
template <typename S>
TensorT<S> relu(const TensorT<S>& a);

// m[n×d] + v[d] per row / m[n×d] ⊙ v[d] per row.
template <typename S>
TensorT<S> add_rowwise(const TensorT<S>& m, const TensorT<S>& v);
template <typename S>
TensorT<S> mul_rowwise(const TensorT<S>& m, const TensorT<S>& v);

template <typename S>
TensorT<S> matvec(const TensorT<S>& m, const TensorT<S>& v);
template <typename S>
TensorT<S> vecmat(const TensorT<S>& v, const TensorT<S>& m);
template <typename S>
TensorT<S> dot(const TensorT<S>& a, const TensorT<S>& b);
template <typename S>
TensorT<S> sum(const TensorT<S>& a);
template <typename S>
TensorT<S> select(const TensorT<S>& v, std::size_t index);

// Numerically stable softmax over a vector (max subtraction).
template <typename S>
TensorT<S> softmax_vec(const TensorT<S>& logits);

// -log p[label], with p[label] clamped below at 1e-12.
template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& p, std::size_t label);

// -sum p log p with 0 log 0 := 0.
template <typename S>
TensorT<S> entropy(const TensorT<S>& p);

// Per-vector (1-D) or per-row (2-D) layer normalization, epsilon 1e-5.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias);

// Row softmax over a [n×n] score matrix where masked key columns receive
// exactly zero probability (and exactly zero gradient).
template <typename S>
TensorT<S> masked_row_softmax(const TensorT<S>& scores, const std::vector<std::uint8_t>& key_mask);

template <typename S>
TensorT<S> gather_rows(const TensorT<S>& m, const std::vector<std::size_t>& indices);
template <typename S>
TensorT<S> slice_rows(const TensorT<S>& m, std::size_t r0, std::size_t r1);
template <typename S>
TensorT<S> slice_cols(const TensorT<S>& m, std::size_t c0, std::size_t c1);
template <typename S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts);

// Inverted dropout; identity when rate == 0.
template <typename S>
TensorT<S> dropout(const TensorT<S>& x, double rate, Rng& rng);

// Non-differentiating helpers.
template <typename S>
std::size_t argmax(const TensorT<S>& v);
std::string shape_string(const std::vector<std::size_t>& shape);

using Tensor = TensorT<float>;
using GradTape = GradTapeT<float>;

}  // namespace spanexplain
