#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "dattn/tape.hpp"

namespace dattn {

/// Central differences resolve a derivative only down to roughly
/// ulp(loss) / (2h) ≈ 1e-11 in absolute terms, so the relative-error
/// denominator carries an absolute guard: gradients below the guard are
/// compared absolutely instead of blowing up the ratio.
inline constexpr double kFdGuard = 1e-6;

/// Central-difference gradient check for a scalar-valued function of one
/// matrix input. Runs entirely in double precision. Returns the worst
/// guarded relative disagreement
/// max |analytic − numeric| / (|analytic| + |numeric| + kFdGuard)
/// over all elements.
inline double finite_diff_check(
    const std::function<Var<double>(Tape<double>&, Var<double>)>& f,
    const MatD& x0, double h = 1e-5) {
  MatD analytic;
  {
    Tape<double> t;
    Var<double> x = t.leaf(x0, /*requires_grad=*/true);
    Var<double> loss = f(t, x);
    if (t.rows(loss) != 1 || t.cols(loss) != 1) {
      throw OracleError("finite_diff_check: function must return a 1x1 value");
    }
    t.backward(loss);
    analytic = t.grad(x);
  }
  double worst = 0.0;
  MatD xp = x0;
  for (Eigen::Index r = 0; r < x0.rows(); ++r) {
    for (Eigen::Index c = 0; c < x0.cols(); ++c) {
      double keep = xp(r, c);
      xp(r, c) = keep + h;
      double up;
      {
        Tape<double> t;
        up = t.value(f(t, t.leaf(xp, true)))(0, 0);
      }
      xp(r, c) = keep - h;
      double down;
      {
        Tape<double> t;
        down = t.value(f(t, t.leaf(xp, true)))(0, 0);
      }
      xp(r, c) = keep;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic(r, c);
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        throw OracleError("finite_diff_check: non-finite derivative at (" +
                          std::to_string(r) + "," + std::to_string(c) + ")");
      }
      double rel =
          std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + kFdGuard);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

/// Same check for a function of a named parameter set, perturbing every
/// element of every parameter. Suited to whole-model checks on small configs.
inline double finite_diff_check_params(
    const std::function<Var<double>(Tape<double>&,
                                    std::map<std::string, Var<double>>&)>& f,
    const std::map<std::string, MatD>& params0, double h = 1e-5) {
  std::map<std::string, MatD> analytic;
  {
    Tape<double> t;
    std::map<std::string, Var<double>> vars;
    for (const auto& [name, value] : params0) {
      vars[name] = t.leaf(value, /*requires_grad=*/true);
    }
    Var<double> loss = f(t, vars);
    if (t.rows(loss) != 1 || t.cols(loss) != 1) {
      throw OracleError(
          "finite_diff_check_params: function must return a 1x1 value");
    }
    t.backward(loss);
    for (const auto& [name, var] : vars) analytic[name] = t.grad(var);
  }
  auto eval_at = [&](const std::map<std::string, MatD>& p) {
    Tape<double> t;
    std::map<std::string, Var<double>> vars;
    for (const auto& [name, value] : p) vars[name] = t.leaf(value, true);
    return t.value(f(t, vars))(0, 0);
  };
  double worst = 0.0;
  std::map<std::string, MatD> pt = params0;
  for (auto& [name, m] : pt) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double keep = m(r, c);
        m(r, c) = keep + h;
        double up = eval_at(pt);
        m(r, c) = keep - h;
        double down = eval_at(pt);
        m(r, c) = keep;
        double numeric = (up - down) / (2.0 * h);
        double a = analytic.at(name)(r, c);
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
          throw OracleError(
              "finite_diff_check_params: non-finite derivative in " + name);
        }
        double rel =
            std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + kFdGuard);
        worst = std::max(worst, rel);
      }
    }
  }
  return worst;
}

}  // namespace dattn
