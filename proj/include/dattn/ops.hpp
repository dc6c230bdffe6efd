#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dattn/tape.hpp"

namespace dattn {

namespace detail {

template <class Scalar>
void check_same_shape(const Mat<Scalar>& a, const Mat<Scalar>& b,
                      const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" +
                     Tape<Scalar>::shape_str(a) + " vs " +
                     Tape<Scalar>::shape_str(b) + ")");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// C = A·B. Backward: dA += dC·Bᵀ, dB += Aᵀ·dC.
template <class S>
Var<S> matmul(Tape<S>& t, Var<S> a, Var<S> b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions disagree (" +
                     Tape<S>::shape_str(av) + " vs " + Tape<S>::shape_str(bv) +
                     ")");
  }
  Mat<S> out = av * bv;
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [a, b, self](Tape<S>& tp) {
    const Mat<S>& g = tp.grad(Var<S>{self});
    if (tp.requires_grad(a)) {
      tp.grad_ref(a).noalias() += g * tp.value(b).transpose();
    }
    if (tp.requires_grad(b)) {
      tp.grad_ref(b).noalias() += tp.value(a).transpose() * g;
    }
  });
}

/// C = A·Bᵀ. Backward: dA += dC·B, dB += dCᵀ·A.
template <class S>
Var<S> matmul_nt(Tape<S>& t, Var<S> a, Var<S> b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt: inner dimensions disagree (" +
                     Tape<S>::shape_str(av) + " vs " + Tape<S>::shape_str(bv) +
                     ")");
  }
  Mat<S> out = av * bv.transpose();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [a, b, self](Tape<S>& tp) {
    const Mat<S>& g = tp.grad(Var<S>{self});
    if (tp.requires_grad(a)) {
      tp.grad_ref(a).noalias() += g * tp.value(b);
    }
    if (tp.requires_grad(b)) {
      tp.grad_ref(b).noalias() += g.transpose() * tp.value(a);
    }
  });
}

template <class S>
Var<S> add(Tape<S>& t, Var<S> a, Var<S> b) {
  detail::check_same_shape(t.value(a), t.value(b), "add");
  Mat<S> out = t.value(a) + t.value(b);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [a, b, self](Tape<S>& tp) {
    const Mat<S>& g = tp.grad(Var<S>{self});
    if (tp.requires_grad(a)) tp.grad_ref(a) += g;
    if (tp.requires_grad(b)) tp.grad_ref(b) += g;
  });
}

/// a (n×c) plus a row vector b (1×c) broadcast over rows.
template <class S>
Var<S> add_rowvec(Tape<S>& t, Var<S> a, Var<S> b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ShapeError("add_rowvec: expected 1x" + std::to_string(av.cols()) +
                     " row vector, got " + Tape<S>::shape_str(bv));
  }
  Mat<S> out = av.rowwise() + bv.row(0);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [a, b, self](Tape<S>& tp) {
    const Mat<S>& g = tp.grad(Var<S>{self});
    if (tp.requires_grad(a)) tp.grad_ref(a) += g;
    if (tp.requires_grad(b)) tp.grad_ref(b).row(0) += g.colwise().sum();
  });
}

template <class S>
Var<S> scale(Tape<S>& t, Var<S> a, S factor) {
  Mat<S> out = t.value(a) * factor;
  const bool rg = t.requires_grad(a);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [a, factor, self](Tape<S>& tp) {
    if (tp.requires_grad(a)) {
      tp.grad_ref(a) += tp.grad(Var<S>{self}) * factor;
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

/// Embedding-style lookup: out.row(i) = table.row(ids[i]).
template <class S>
Var<S> rows_gather(Tape<S>& t, Var<S> table, const std::vector<int>& ids) {
  const auto& tv = t.value(table);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw IndexError("rows_gather: id " + std::to_string(ids[i]) +
                       " at position " + std::to_string(i) +
                       " outside table with " + std::to_string(tv.rows()) +
                       " rows");
    }
  }
  Mat<S> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  const bool rg = t.requires_grad(table);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [table, ids, self](Tape<S>& tp) {
    if (!tp.requires_grad(table)) return;
    const Mat<S>& g = tp.grad(Var<S>{self});
    Mat<S>& tg = tp.grad_ref(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      tg.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    }
  });
}

template <class S>
Var<S> rows_slice(Tape<S>& t, Var<S> x, Eigen::Index start, Eigen::Index len) {
  const auto& xv = t.value(x);
  if (start < 0 || len <= 0 || start + len > xv.rows()) {
    throw ShapeError("rows_slice: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") outside " +
                     Tape<S>::shape_str(xv));
  }
  Mat<S> out = xv.middleRows(start, len);
  const bool rg = t.requires_grad(x);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [x, start, len, self](Tape<S>& tp) {
    if (tp.requires_grad(x)) {
      tp.grad_ref(x).middleRows(start, len) += tp.grad(Var<S>{self});
    }
  });
}

template <class S>
Var<S> rows_concat(Tape<S>& t, Var<S> a, Var<S> b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  if (av.cols() != bv.cols()) {
    throw ShapeError("rows_concat: column counts disagree (" +
                     Tape<S>::shape_str(av) + " vs " + Tape<S>::shape_str(bv) +
                     ")");
  }
  Mat<S> out(av.rows() + bv.rows(), av.cols());
  out.topRows(av.rows()) = av;
  out.bottomRows(bv.rows()) = bv;
  const Eigen::Index arows = av.rows();
  const Eigen::Index brows = bv.rows();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [a, b, arows, brows, self](Tape<S>& tp) {
    const Mat<S>& g = tp.grad(Var<S>{self});
    if (tp.requires_grad(a)) tp.grad_ref(a) += g.topRows(arows);
    if (tp.requires_grad(b)) tp.grad_ref(b) += g.bottomRows(brows);
  });
}

template <class S>
Var<S> cols_slice(Tape<S>& t, Var<S> x, Eigen::Index start, Eigen::Index len) {
  const auto& xv = t.value(x);
  if (start < 0 || len <= 0 || start + len > xv.cols()) {
    throw ShapeError("cols_slice: [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") outside " +
                     Tape<S>::shape_str(xv));
  }
  Mat<S> out = xv.middleCols(start, len);
  const bool rg = t.requires_grad(x);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [x, start, len, self](Tape<S>& tp) {
    if (tp.requires_grad(x)) {
      tp.grad_ref(x).middleCols(start, len) += tp.grad(Var<S>{self});
    }
  });
}

template <class S>
Var<S> cols_concat(Tape<S>& t, const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("cols_concat: no parts");
  Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index total = 0;
  bool rg = false;
  for (Var<S> p : parts) {
    if (t.value(p).rows() != rows) {
      throw ShapeError("cols_concat: row counts disagree");
    }
    total += t.value(p).cols();
    rg = rg || t.requires_grad(p);
  }
  Mat<S> out(rows, total);
  Eigen::Index at = 0;
  std::vector<Eigen::Index> offsets;
  for (Var<S> p : parts) {
    Eigen::Index w = t.value(p).cols();
    out.middleCols(at, w) = t.value(p);
    offsets.push_back(at);
    at += w;
  }
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [parts, offsets, self](Tape<S>& tp) {
    const Mat<S>& g = tp.grad(Var<S>{self});
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (tp.requires_grad(parts[i])) {
        Eigen::Index w = tp.value(parts[i]).cols();
        tp.grad_ref(parts[i]) += g.middleCols(offsets[i], w);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

/// Row-wise softmax of (scale·x) over the last dimension, stabilized by
/// max-subtraction. Every output row is a probability vector.
template <class S>
Var<S> softmax_lastdim(Tape<S>& t, Var<S> x, S sm_scale) {
  const auto& xv = t.value(x);
  if (xv.cols() < 1) {
    throw ShapeError("softmax_lastdim: empty last dimension, shape " +
                     Tape<S>::shape_str(xv));
  }
  if (!(sm_scale > S(0)) || !std::isfinite(static_cast<double>(sm_scale))) {
    throw NumericError("softmax_lastdim: scale must be positive and finite");
  }
  Mat<S> p(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    auto z = (xv.row(r).array() * sm_scale).eval();
    S m = z.maxCoeff();
    auto e = (z - m).exp().eval();
    p.row(r) = e / e.sum();
  }
  const bool rg = t.requires_grad(x);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(p), rg, [x, sm_scale, self](Tape<S>& tp) {
    if (!tp.requires_grad(x)) return;
    const Mat<S>& g = tp.grad(Var<S>{self});
    const Mat<S>& pv = tp.value(Var<S>{self});
    Mat<S>& xg = tp.grad_ref(x);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      S dot = (g.row(r).array() * pv.row(r).array()).sum();
      xg.row(r).array() +=
          sm_scale * pv.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

/// Softmax over the unmasked entries of each row; masked entries get an
/// exact 0 probability. A fully masked row is an error, never a silent
/// uniform distribution.
template <class S>
Var<S> masked_softmax(Tape<S>& t, Var<S> x, const BoolMat& mask, S sm_scale) {
  const auto& xv = t.value(x);
  if (xv.cols() < 1) {
    throw ShapeError("masked_softmax: empty last dimension");
  }
  if (mask.rows() != xv.rows() || mask.cols() != xv.cols()) {
    throw ShapeError("masked_softmax: mask shape mismatch (scores " +
                     Tape<S>::shape_str(xv) + ")");
  }
  if (!(sm_scale > S(0)) || !std::isfinite(static_cast<double>(sm_scale))) {
    throw NumericError("masked_softmax: scale must be positive and finite");
  }
  Mat<S> p = Mat<S>::Zero(xv.rows(), xv.cols());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    S m = S(0);
    bool any = false;
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      if (!mask(r, c)) continue;
      S z = xv(r, c) * sm_scale;
      m = any ? std::max(m, z) : z;
      any = true;
    }
    if (!any) {
      throw MaskingError("masked_softmax: query row " + std::to_string(r) +
                         " has no unmasked key");
    }
    S denom = S(0);
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      if (!mask(r, c)) continue;
      S e = std::exp(xv(r, c) * sm_scale - m);
      p(r, c) = e;
      denom += e;
    }
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      if (mask(r, c)) p(r, c) /= denom;
    }
  }
  const bool rg = t.requires_grad(x);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(p), rg, [x, mask, sm_scale, self](Tape<S>& tp) {
    if (!tp.requires_grad(x)) return;
    const Mat<S>& g = tp.grad(Var<S>{self});
    const Mat<S>& pv = tp.value(Var<S>{self});
    Mat<S>& xg = tp.grad_ref(x);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      S dot = S(0);
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        if (mask(r, c)) dot += g(r, c) * pv(r, c);
      }
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        if (mask(r, c)) {
          xg(r, c) += sm_scale * pv(r, c) * (g(r, c) - dot);
        }
      }
    }
  });
}

/// Per-row layer normalization followed by the affine map y = x̂⊙gain + bias.
/// gain and bias are 1×d row vectors over the normalized dimension.
template <class S>
Var<S> layer_norm(Tape<S>& t, Var<S> x, Var<S> gain, Var<S> bias, S eps) {
  const auto& xv = t.value(x);
  const auto& gv = t.value(gain);
  const auto& bv = t.value(bias);
  if (xv.cols() < 1) {
    throw ShapeError("layer_norm: zero-length normalized dimension");
  }
  if (gv.rows() != 1 || gv.cols() != xv.cols() || bv.rows() != 1 ||
      bv.cols() != xv.cols()) {
    throw ShapeError("layer_norm: gain/bias must be 1x" +
                     std::to_string(xv.cols()) + ", got " +
                     Tape<S>::shape_str(gv) + " and " +
                     Tape<S>::shape_str(bv));
  }
  const Eigen::Index n = xv.rows(), d = xv.cols();
  Mat<S> xhat(n, d);
  Mat<S> inv_std(n, 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    S mu = xv.row(r).mean();
    S var = (xv.row(r).array() - mu).square().sum() / S(d);
    S inv = S(1) / std::sqrt(var + eps);
    inv_std(r, 0) = inv;
    xhat.row(r) = (xv.row(r).array() - mu) * inv;
  }
  Mat<S> out = ((xhat.array().rowwise() * gv.row(0).array()).rowwise() +
                bv.row(0).array())
                   .matrix();
  const bool rg =
      t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
  const int self = static_cast<int>(t.num_slots());
  // xhat and inv_std are needed in reverse; keep them on the closure.
  auto xhat_p = std::make_shared<Mat<S>>(std::move(xhat));
  auto inv_p = std::make_shared<Mat<S>>(std::move(inv_std));
  return t.emit(
      std::move(out), rg, [x, gain, bias, xhat_p, inv_p, self](Tape<S>& tp) {
        const Mat<S>& g = tp.grad(Var<S>{self});
        const Mat<S>& xh = *xhat_p;
        const Eigen::Index d = g.cols();
        if (tp.requires_grad(gain)) {
          tp.grad_ref(gain).row(0) +=
              (g.array() * xh.array()).colwise().sum().matrix();
        }
        if (tp.requires_grad(bias)) {
          tp.grad_ref(bias).row(0) += g.colwise().sum();
        }
        if (tp.requires_grad(x)) {
          const auto& gainrow = tp.value(gain).row(0);
          Mat<S>& xg = tp.grad_ref(x);
          for (Eigen::Index r = 0; r < g.rows(); ++r) {
            auto dxhat = (g.row(r).array() * gainrow.array()).eval();
            S m1 = dxhat.mean();
            S m2 = (dxhat * xh.row(r).array()).mean();
            xg.row(r).array() +=
                (*inv_p)(r, 0) * (dxhat - m1 - xh.row(r).array() * m2);
          }
          (void)d;
        }
      });
}

namespace detail {

template <class S>
inline S gelu_exact(S v) {
  return S(0.5) * v * (S(1) + std::erf(v * S(M_SQRT1_2)));
}
template <class S>
inline S gelu_exact_grad(S v) {
  const S phi = std::exp(S(-0.5) * v * v) * S(0.3989422804014327);
  return S(0.5) * (S(1) + std::erf(v * S(M_SQRT1_2))) + v * phi;
}
template <class S>
inline S gelu_tanh(S v) {
  const S k = S(0.7978845608028654);  // sqrt(2/pi)
  S u = k * (v + S(0.044715) * v * v * v);
  return S(0.5) * v * (S(1) + std::tanh(u));
}
template <class S>
inline S gelu_tanh_grad(S v) {
  const S k = S(0.7978845608028654);
  S u = k * (v + S(0.044715) * v * v * v);
  S th = std::tanh(u);
  S sech2 = S(1) - th * th;
  S du = k * (S(1) + S(3) * S(0.044715) * v * v);
  return S(0.5) * (S(1) + th) + S(0.5) * v * sech2 * du;
}

}  // namespace detail

/// Elementwise GELU. Exact erf form by default; the tanh approximation is
/// selectable to match configs that ask for it.
template <class S>
Var<S> gelu(Tape<S>& t, Var<S> x, bool tanh_approx = false) {
  const auto& xv = t.value(x);
  Mat<S> out(xv.rows(), xv.cols());
  if (tanh_approx) {
    out = xv.unaryExpr([](S v) { return detail::gelu_tanh(v); });
  } else {
    out = xv.unaryExpr([](S v) { return detail::gelu_exact(v); });
  }
  const bool rg = t.requires_grad(x);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [x, tanh_approx, self](Tape<S>& tp) {
    if (!tp.requires_grad(x)) return;
    const Mat<S>& g = tp.grad(Var<S>{self});
    const Mat<S>& xv2 = tp.value(x);
    Mat<S> dgelu =
        tanh_approx
            ? Mat<S>(xv2.unaryExpr([](S v) { return detail::gelu_tanh_grad(v); }))
            : Mat<S>(xv2.unaryExpr([](S v) { return detail::gelu_exact_grad(v); }));
    tp.grad_ref(x).array() += g.array() * dgelu.array();
  });
}

/// Inverted dropout: survivors are scaled by 1/(1−p) so eval needs no
/// rescaling. Identity when training is off or p == 0 (no rng draws then).
template <class S>
Var<S> dropout(Tape<S>& t, Var<S> x, double p, std::mt19937_64& rng,
               bool training) {
  if (p < 0.0 || p >= 1.0) {
    throw ConfigError("dropout: probability " + std::to_string(p) +
                      " outside [0, 1)");
  }
  if (!training || p == 0.0) return x;
  const auto& xv = t.value(x);
  const S keep_scale = S(1.0 / (1.0 - p));
  auto keep = std::make_shared<Mat<S>>(xv.rows(), xv.cols());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    for (Eigen::Index c = 0; c < xv.cols(); ++c) {
      (*keep)(r, c) = (u(rng) < p) ? S(0) : keep_scale;
    }
  }
  Mat<S> out = xv.array() * keep->array();
  const bool rg = t.requires_grad(x);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [x, keep, self](Tape<S>& tp) {
    if (tp.requires_grad(x)) {
      tp.grad_ref(x).array() +=
          tp.grad(Var<S>{self}).array() * keep->array();
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <class S>
Var<S> sum_all(Tape<S>& t, Var<S> x) {
  Mat<S> out(1, 1);
  out(0, 0) = t.value(x).sum();
  const bool rg = t.requires_grad(x);
  const int self = static_cast<int>(t.num_slots());
  return t.emit(std::move(out), rg, [x, self](Tape<S>& tp) {
    if (tp.requires_grad(x)) {
      tp.grad_ref(x).array() += tp.grad(Var<S>{self})(0, 0);
    }
  });
}

/// Σ x⊙w for a constant weight matrix w (same shape as x). The weights do
/// not participate in differentiation.
template <class S>
Var<S> dot_const(Tape<S>& t, Var<S> x, Mat<S> w) {
  detail::check_same_shape(t.value(x), w, "dot_const");
  Mat<S> out(1, 1);
  out(0, 0) = (t.value(x).array() * w.array()).sum();
  const bool rg = t.requires_grad(x);
  const int self = static_cast<int>(t.num_slots());
  auto wp = std::make_shared<Mat<S>>(std::move(w));
  return t.emit(std::move(out), rg, [x, wp, self](Tape<S>& tp) {
    if (tp.requires_grad(x)) {
      tp.grad_ref(x).array() += tp.grad(Var<S>{self})(0, 0) * wp->array();
    }
  });
}

/// x·W + b convenience. Pass an invalid bias var to skip the bias.
template <class S>
Var<S> linear(Tape<S>& t, Var<S> x, Var<S> w, Var<S> b) {
  Var<S> y = matmul(t, x, w);
  if (b.valid()) y = add_rowvec(t, y, b);
  return y;
}

template <class S>
struct CrossEntropyOut {
  Var<S> per_position;  // n×1; zero at ignored positions
  Var<S> mean;          // 1×1; mean over supervised positions (0 if none)
  int supervised = 0;
  bool no_supervised = false;  // set when every position is ignored
};

/// Per-position cross entropy from raw logits, −log softmax(logits)[target].
/// Positions whose target equals ignore_index carry zero loss and are
/// excluded from the mean. The per-position vector is kept differentiable so
/// downstream re-weighting can scale individual positions.
template <class S>
CrossEntropyOut<S> cross_entropy_logits(Tape<S>& t, Var<S> logits,
                                        const std::vector<int>& targets,
                                        int ignore_index) {
  const auto& zv = t.value(logits);
  const Eigen::Index n = zv.rows(), vocab = zv.cols();
  if (static_cast<Eigen::Index>(targets.size()) != n) {
    throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  }
  int supervised = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int tgt = targets[static_cast<std::size_t>(i)];
    if (tgt == ignore_index) continue;
    if (tgt < 0 || tgt >= vocab) {
      throw IndexError("cross_entropy_logits: target " + std::to_string(tgt) +
                       " at row " + std::to_string(i) + " outside vocab of " +
                       std::to_string(vocab));
    }
    ++supervised;
  }
  // Softmax probabilities are needed by the reverse step; compute once.
  auto probs = std::make_shared<Mat<S>>(n, vocab);
  Mat<S> per(n, 1);
  per.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    auto z = zv.row(i).array().eval();
    S m = z.maxCoeff();
    auto e = (z - m).exp().eval();
    S denom = e.sum();
    probs->row(i) = e / denom;
    int tgt = targets[static_cast<std::size_t>(i)];
    if (tgt != ignore_index) {
      S lse = m + std::log(denom);
      per(i, 0) = lse - zv(i, tgt);
    }
  }
  const bool rg = t.requires_grad(logits);
  const int self = static_cast<int>(t.num_slots());
  CrossEntropyOut<S> out;
  out.per_position = t.emit(
      std::move(per), rg,
      [logits, targets, ignore_index, probs, self](Tape<S>& tp) {
        if (!tp.requires_grad(logits)) return;
        const Mat<S>& g = tp.grad(Var<S>{self});
        Mat<S>& zg = tp.grad_ref(logits);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          int tgt = targets[static_cast<std::size_t>(i)];
          if (tgt == ignore_index) continue;
          zg.row(i).array() += g(i, 0) * probs->row(i).array();
          zg(i, tgt) -= g(i, 0);
        }
      });
  out.supervised = supervised;
  out.no_supervised = supervised == 0;
  if (supervised == 0) {
    out.mean = t.scalar_constant(S(0));
  } else {
    Mat<S> w = Mat<S>::Zero(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (targets[static_cast<std::size_t>(i)] != ignore_index) {
        w(i, 0) = S(1) / S(supervised);
      }
    }
    out.mean = dot_const(t, out.per_position, std::move(w));
  }
  return out;
}

}  // namespace dattn
