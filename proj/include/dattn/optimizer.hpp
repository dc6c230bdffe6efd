#pragma once

#include <cmath>
#include <map>
#include <string>

#include "dattn/tape.hpp"

namespace dattn {

enum class OptimizerKind { adam, lamb };

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "lamb";
}

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "lamb") return OptimizerKind::lamb;
  throw ConfigError("unknown optimizer '" + s + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;  // peak learning rate
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 100;
  int total_steps = 1000;
  double clip_norm = 1.0;  // 0 disables clipping

  void validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ConfigError("optimizer betas must lie in (0, 1)");
    }
    if (warmup_steps < 0 || total_steps < 1 || warmup_steps > total_steps) {
      throw ConfigError("need 0 <= warmup_steps <= total_steps");
    }
    if (!(eps > 0.0)) throw ConfigError("optimizer eps must be positive");
    if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  }
};

/// Linear warmup from 0 to the peak over warmup_steps, then linear decay to
/// 0 at total_steps.
inline double lr_schedule(long long step, const OptimizerConfig& cfg) {
  cfg.validate();
  if (step < 0) throw ConfigError("lr_schedule: negative step");
  if (step >= cfg.total_steps) return 0.0;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / cfg.warmup_steps;
  }
  if (cfg.total_steps == cfg.warmup_steps) return cfg.lr;
  return cfg.lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

template <class S>
struct OptimizerState {
  std::map<std::string, Mat<S>> m;  // first moments
  std::map<std::string, Mat<S>> v;  // second moments
  long long step = 0;               // completed updates
};

/// Scales all gradients by min(1, max_norm/global_norm). Returns the global
/// norm before clipping. max_norm == 0 leaves gradients untouched.
template <class S>
double clip_global_norm(std::map<std::string, Mat<S>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    sq += static_cast<double>(g.template cast<double>().squaredNorm());
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const S factor = static_cast<S>(max_norm / norm);
    for (auto& [name, g] : grads) g *= factor;
  }
  return norm;
}

/// One Adam or LAMB update at the given learning rate. Both share
/// bias-corrected moment estimates; LAMB scales each tensor's update by the
/// trust ratio ||θ|| / ||u||, taken as 1 when either norm is zero.
template <class S>
void optimizer_step(std::map<std::string, Mat<S>>& params,
                    const std::map<std::string, Mat<S>>& grads,
                    OptimizerState<S>& state, const OptimizerConfig& cfg,
                    double lr) {
  cfg.validate();
  const long long t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, theta] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) {
      throw ConfigError("optimizer_step: no gradient for parameter '" + name +
                        "'");
    }
    const Mat<S>& g = git->second;
    if (!g.allFinite()) {
      throw NumericError("non-finite gradient in parameter '" + name + "'");
    }
    Mat<S>& m = state.m.try_emplace(name, Mat<S>::Zero(g.rows(), g.cols()))
                    .first->second;
    Mat<S>& v = state.v.try_emplace(name, Mat<S>::Zero(g.rows(), g.cols()))
                    .first->second;
    m = static_cast<S>(cfg.beta1) * m + static_cast<S>(1.0 - cfg.beta1) * g;
    v = (static_cast<S>(cfg.beta2) * v.array() +
         static_cast<S>(1.0 - cfg.beta2) * g.array().square())
            .matrix();
    Mat<S> update =
        ((m.array() / static_cast<S>(bc1)) /
         ((v.array() / static_cast<S>(bc2)).sqrt() + static_cast<S>(cfg.eps)))
            .matrix();
    double scale = lr;
    if (cfg.kind == OptimizerKind::lamb) {
      double theta_norm =
          std::sqrt(static_cast<double>(theta.template cast<double>().squaredNorm()));
      double update_norm =
          std::sqrt(static_cast<double>(update.template cast<double>().squaredNorm()));
      double trust =
          (theta_norm == 0.0 || update_norm == 0.0) ? 1.0 : theta_norm / update_norm;
      scale = lr * trust;
    }
    theta -= static_cast<S>(scale) * update;
  }
  state.step = t;
}

/// True iff the last `patience` evaluations brought no strict improvement of
/// the running best metric.
inline bool early_stop(const std::vector<double>& history, int patience) {
  if (patience < 1) throw ConfigError("early_stop patience must be >= 1");
  if (history.empty()) return false;
  double best = history[0];
  std::size_t last_improve = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] > best) {
      best = history[i];
      last_improve = i;
    }
  }
  return history.size() - 1 - last_improve >=
         static_cast<std::size_t>(patience);
}

}  // namespace dattn
