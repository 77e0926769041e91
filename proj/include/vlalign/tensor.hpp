#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vlalign/common.hpp"

namespace vlalign {

namespace detail {

struct TensorData {
  std::vector<int> shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // same length as values when requires_grad
};

}  // namespace detail

class Tape;

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}
}  // namespace detail

// Dense n-dimensional tensor of doubles. Handles share the underlying
// buffer; values are treated as immutable once an op has consumed them.
// The grad buffer is the one mutable slot and is written by Tape::backward.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0, bool requires_grad = false) {
    long n = check_shape(shape);
    impl_ = std::make_shared<detail::TensorData>();
    impl_->shape = std::move(shape);
    impl_->values.assign(static_cast<size_t>(n), fill);
    set_requires_grad(requires_grad);
  }

  static Tensor from_flat(std::vector<int> shape, std::vector<double> values,
                          bool requires_grad = false) {
    long n = check_shape(shape);
    check(static_cast<size_t>(n) == values.size(),
          "Tensor: data length does not match shape product");
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorData>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_flat({1}, {v}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }

  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  long size() const { return static_cast<long>(impl_->values.size()); }

  bool is_scalar() const { return size() == 1; }

  double value() const {
    check(is_scalar(), "Tensor::value: tensor is not scalar");
    return impl_->values[0];
  }

  const double* data() const { return impl_->values.data(); }
  const std::vector<double>& values() const { return impl_->values; }

  // Raw write access for construction and optimizer updates. Never call on a
  // tensor that is already part of a live computation record.
  double* raw() { return impl_->values.data(); }
  std::vector<double>& raw_values() { return impl_->values; }

  double operator()(int i) const { return impl_->values[static_cast<size_t>(i)]; }
  double operator()(int i, int j) const {
    return impl_->values[static_cast<size_t>(i) * dim(1) + j];
  }

  bool requires_grad() const { return impl_->requires_grad; }

  void set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    if (rg && impl_->grad.size() != impl_->values.size()) {
      impl_->grad.assign(impl_->values.size(), 0.0);
    }
  }

  const std::vector<double>& grad() const {
    check(impl_->requires_grad, "Tensor::grad: tensor does not track gradients");
    return impl_->grad;
  }

  std::vector<double>& grad_mut() {
    check(impl_->requires_grad, "Tensor::grad_mut: tensor does not track gradients");
    return impl_->grad;
  }

  void zero_grad() {
    if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  void check_finite(const std::string& op) const {
    for (double v : impl_->values) {
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite value produced by op '" + op + "'");
    }
  }

  std::shared_ptr<detail::TensorData> impl() const { return impl_; }

 private:
  static long check_shape(const std::vector<int>& shape) {
    check(!shape.empty(), "Tensor: shape must be non-empty");
    long n = 1;
    for (int d : shape) {
      check(d > 0, "Tensor: shape entries must be positive");
      n *= d;
    }
    return n;
  }

  std::shared_ptr<detail::TensorData> impl_;
};

// Record of executed ops, in execution order. Each entry carries the adjoint
// closure for one op; backward replays the record once, in reverse.
class Tape {
 public:
  struct Op {
    std::string name;
    std::function<void()> backward;
  };

  void record(std::string name, std::function<void()> backward) {
    ops_.push_back(Op{std::move(name), std::move(backward)});
  }

  size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }
  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and visits every recorded op exactly once in
  // reverse order, accumulating adjoints additively.
  void backward(Tensor& loss) {
    check(loss.is_scalar(), "backward: loss must be scalar");
    check(!ops_.empty(), "backward: computation record is empty");
    check(loss.requires_grad(), "backward: loss is not connected to the record");
    loss.grad_mut()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      it->backward();
    }
  }

 private:
  std::vector<Op> ops_;
};

// RAII activation of a tape; ops executed inside the scope are recorded.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::active_tape_slot()) {
    detail::active_tape_slot() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot() = prev_; }

  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

inline Tape* active_tape() { return detail::active_tape_slot(); }

inline void backward(Tensor loss) {
  Tape* t = active_tape();
  check(t != nullptr, "backward: no active tape");
  t->backward(loss);
}

}  // namespace vlalign
