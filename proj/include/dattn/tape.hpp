#pragma once

#include <Eigen/Dense>

#include <functional>
#include <sstream>
#include <utility>
#include <vector>

#include "dattn/errors.hpp"

namespace dattn {

// All dense values are row-major matrices; rank-1 data rides as 1×n,
// scalars as 1×1.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Handle to a value recorded on a Tape. Cheap to copy; valid only for
/// the tape that produced it.
template <class Scalar>
struct Var {
  int slot = -1;
  bool valid() const { return slot >= 0; }
};

/// Wengert-list reverse-mode tape. Operations are recorded in execution
/// order (so inputs always precede their consumers) and backward() replays
/// the recorded steps newest-first, which makes gradients deterministic:
/// two backward passes over the same tape are bit-identical.
///
/// A tape is single-threaded; use one tape per worker.
template <class Scalar>
class Tape {
 public:
  using M = Mat<Scalar>;

  Var<Scalar> leaf(M value, bool requires_grad = false) {
    return push(std::move(value), requires_grad);
  }

  Var<Scalar> constant(M value) { return push(std::move(value), false); }

  Var<Scalar> scalar_constant(Scalar v) {
    M m(1, 1);
    m(0, 0) = v;
    return push(std::move(m), false);
  }

  /// Record a computed value together with its reverse step. Ops call this;
  /// user code normally never does.
  Var<Scalar> emit(M value, bool requires_grad,
                   std::function<void(Tape&)> back) {
    if (check_finite && !value.allFinite()) {
      throw NumericError("tape: non-finite value produced by recorded op");
    }
    Var<Scalar> v = push(std::move(value), requires_grad);
    if (requires_grad && back) {
      steps_.push_back(std::move(back));
    }
    return v;
  }

  const M& value(Var<Scalar> v) const { return at(v).value; }

  M& value_ref(Var<Scalar> v) { return at(v).value; }

  const M& grad(Var<Scalar> v) const {
    const Slot& s = at(v);
    if (!grads_ready_) throw Error("tape: backward() has not run");
    return s.grad;
  }

  M& grad_ref(Var<Scalar> v) { return at(v).grad; }

  bool requires_grad(Var<Scalar> v) const { return at(v).requires_grad; }

  Eigen::Index rows(Var<Scalar> v) const { return at(v).value.rows(); }
  Eigen::Index cols(Var<Scalar> v) const { return at(v).value.cols(); }

  /// Seeds d(loss) = 1 and replays every recorded step in exact reverse
  /// order. `loss` must be 1×1. May be called repeatedly; gradients are
  /// reset first, so repeated calls agree bitwise.
  void backward(Var<Scalar> loss) {
    const Slot& ls = at(loss);
    if (ls.value.rows() != 1 || ls.value.cols() != 1) {
      throw ShapeError("backward: loss must be 1x1, got " +
                       shape_str(ls.value));
    }
    if (!ls.requires_grad) {
      throw Error("backward: loss does not require grad");
    }
    for (Slot& s : slots_) {
      if (s.requires_grad) {
        s.grad.setZero(s.value.rows(), s.value.cols());
      }
    }
    grads_ready_ = true;
    at(loss).grad(0, 0) = Scalar(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
      (*it)(*this);
    }
  }

  std::size_t num_slots() const { return slots_.size(); }
  std::size_t num_steps() const { return steps_.size(); }

  static std::string shape_str(const M& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
  }

  bool check_finite = false;

 private:
  struct Slot {
    M value;
    M grad;
    bool requires_grad = false;
  };

  Var<Scalar> push(M value, bool requires_grad) {
    slots_.push_back(Slot{std::move(value), M(), requires_grad});
    return Var<Scalar>{static_cast<int>(slots_.size()) - 1};
  }

  Slot& at(Var<Scalar> v) {
    if (!v.valid() || v.slot >= static_cast<int>(slots_.size())) {
      throw Error("tape: invalid var handle");
    }
    return slots_[static_cast<std::size_t>(v.slot)];
  }
  const Slot& at(Var<Scalar> v) const {
    return const_cast<Tape*>(this)->at(v);
  }

  std::vector<Slot> slots_;
  std::vector<std::function<void(Tape&)>> steps_;
  bool grads_ready_ = false;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace dattn
