#pragma once

#include <cmath>
#include <map>
#include <tuple>
#include <vector>

#include "dattn/batch.hpp"
#include "dattn/model.hpp"

namespace dattn {

enum class LossMode { plain_ce, naive_fl, adaptive_fl };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::plain_ce: return "plain_ce";
    case LossMode::naive_fl: return "naive_fl";
    case LossMode::adaptive_fl: return "adaptive_fl";
  }
  return "?";
}

/// Loss bookkeeping key: per language, separately for monolingual and
/// bilingual data.
struct GroupKey {
  int language = -1;
  DataType data_type = DataType::mono;

  bool operator<(const GroupKey& o) const {
    return std::tie(language, data_type) < std::tie(o.language, o.data_type);
  }
  bool operator==(const GroupKey& o) const {
    return language == o.language && data_type == o.data_type;
  }
};

struct ReweightConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  double loss_threshold = 1.6;      // gate opens only at or below this EMA
  long long step_threshold = 2000000;  // and only at or after this step
  double ema_decay = 0.99;
};

struct GroupReweight {
  double ema_ce = 0.0;
  bool initialized = false;
  double gamma_l = 0.0;
};

/// Focal weight α(1−p_t)^γ. The caller treats the result as a constant
/// during differentiation.
inline double focal_weight(double p_t, double alpha, double gamma) {
  if (!(p_t >= 0.0) || !(p_t <= 1.0)) {
    throw NumericError("focal_weight: p_t " + std::to_string(p_t) +
                       " outside [0, 1]");
  }
  return alpha * std::pow(1.0 - p_t, gamma);
}

/// The per-(language, data-type) gate state: an EMA of batch-mean CE and the
/// hard γ gate derived from it. The gate is re-evaluated on every update and
/// can re-close; it carries no hysteresis.
struct ReweightState {
  ReweightConfig cfg;
  std::map<GroupKey, GroupReweight> groups;

  double gamma_for(const GroupKey& key) const {
    auto it = groups.find(key);
    return it == groups.end() ? 0.0 : it->second.gamma_l;
  }

  void update(const GroupKey& key, double mean_ce, long long step) {
    GroupReweight& g = groups[key];
    if (!g.initialized) {
      g.ema_ce = mean_ce;
      g.initialized = true;
    } else {
      g.ema_ce = cfg.ema_decay * g.ema_ce + (1.0 - cfg.ema_decay) * mean_ce;
    }
    g.gamma_l = (g.ema_ce <= cfg.loss_threshold && step >= cfg.step_threshold)
                    ? cfg.gamma
                    : 0.0;
  }
};

struct LossGroup {
  GroupKey key;
  double mean_ce = 0.0;  // unweighted mean CE over the group's positions
  int positions = 0;
  double gamma_l = 0.0;  // the exponent the weighting actually used
};

template <class S>
struct LossResult {
  Var<S> total;  // 1×1, differentiable
  double value = 0.0;
  int predicted_positions = 0;
  bool no_supervised = false;
  std::vector<LossGroup> groups;
  std::vector<std::vector<double>> per_position_ce;  // [row][position]
  std::vector<std::vector<double>> focal_weights;    // [row][position]
};

/// Weighted masked-prediction loss over one batch: forward each row, take
/// per-position CE at predicted positions, weight by α(1−p_t)^{γ_l} with
/// gradient-stopped weights, and average over all predicted positions.
/// plain_ce fixes (α=1, γ=0); naive_fl forces γ_l=γ everywhere; adaptive_fl
/// takes γ_l per (language, data-type) from the ReweightState gate.
template <class S>
LossResult<S> total_loss(Tape<S>& t, const BoundModel<S>& bm, const Batch& batch,
                         const ReweightState& state, LossMode mode,
                         const ForwardOptions& fwd_opts = {}) {
  if (batch.size() == 0) throw DataError("total_loss: empty batch");
  const ReweightConfig& rw = state.cfg;
  const double alpha = mode == LossMode::plain_ce ? 1.0 : rw.alpha;

  // First pass: forwards and per-position CE values.
  struct RowData {
    CrossEntropyOut<S> ce;
    std::vector<double> ce_values;
  };
  std::vector<RowData> row_data;
  row_data.reserve(static_cast<std::size_t>(batch.size()));
  int total_predicted = 0;
  std::map<GroupKey, std::pair<double, int>> group_sums;  // sum ce, count
  for (int r = 0; r < batch.size(); ++r) {
    const SegmentLayout& lay = batch.layouts[static_cast<std::size_t>(r)];
    Var<S> hidden = encoder_forward(t, bm, batch.rows[static_cast<std::size_t>(r)],
                                    lay, fwd_opts);
    Var<S> logits = lm_head(t, bm, hidden);
    const std::vector<int>& targets =
        batch.plans[static_cast<std::size_t>(r)].targets;
    CrossEntropyOut<S> ce = cross_entropy_logits(t, logits, targets, kIgnoreIndex);
    RowData rd;
    rd.ce = ce;
    const Mat<S>& per = t.value(ce.per_position);
    rd.ce_values.resize(static_cast<std::size_t>(per.rows()));
    for (Eigen::Index i = 0; i < per.rows(); ++i) {
      rd.ce_values[static_cast<std::size_t>(i)] = static_cast<double>(per(i, 0));
    }
    for (int i = 0; i < lay.n; ++i) {
      if (targets[static_cast<std::size_t>(i)] == kIgnoreIndex) continue;
      GroupKey key{lay.segment_of(i) == 0 ? lay.lang_x : lay.lang_y,
                   batch.data_type};
      auto& [sum, count] = group_sums[key];
      sum += rd.ce_values[static_cast<std::size_t>(i)];
      count += 1;
      ++total_predicted;
    }
    row_data.push_back(std::move(rd));
  }

  LossResult<S> result;
  result.predicted_positions = total_predicted;
  for (const auto& [key, sc] : group_sums) {
    double gamma_l;
    switch (mode) {
      case LossMode::plain_ce: gamma_l = 0.0; break;
      case LossMode::naive_fl: gamma_l = rw.gamma; break;
      case LossMode::adaptive_fl: gamma_l = state.gamma_for(key); break;
      default: throw ConfigError("unknown loss mode");
    }
    result.groups.push_back(
        {key, sc.first / sc.second, sc.second, gamma_l});
  }
  if (total_predicted == 0) {
    result.total = t.scalar_constant(S(0));
    result.no_supervised = true;
    result.per_position_ce.assign(static_cast<std::size_t>(batch.size()), {});
    result.focal_weights.assign(static_cast<std::size_t>(batch.size()), {});
    return result;
  }

  auto gamma_of = [&](const GroupKey& key) {
    for (const LossGroup& g : result.groups) {
      if (g.key == key) return g.gamma_l;
    }
    throw DataError("total_loss: group missing from breakdown");
  };

  // Second pass: per-row weight vectors (constants) and the weighted mean.
  Var<S> total;
  for (int r = 0; r < batch.size(); ++r) {
    const SegmentLayout& lay = batch.layouts[static_cast<std::size_t>(r)];
    const std::vector<int>& targets =
        batch.plans[static_cast<std::size_t>(r)].targets;
    const RowData& rd = row_data[static_cast<std::size_t>(r)];
    Mat<S> w = Mat<S>::Zero(lay.n, 1);
    std::vector<double> row_ce(static_cast<std::size_t>(lay.n), 0.0);
    std::vector<double> row_w(static_cast<std::size_t>(lay.n), 0.0);
    for (int i = 0; i < lay.n; ++i) {
      if (targets[static_cast<std::size_t>(i)] == kIgnoreIndex) continue;
      GroupKey key{lay.segment_of(i) == 0 ? lay.lang_x : lay.lang_y,
                   batch.data_type};
      double ce_i = rd.ce_values[static_cast<std::size_t>(i)];
      double p_t = std::exp(-ce_i);
      if (p_t > 1.0) p_t = 1.0;
      double weight = focal_weight(p_t, alpha, gamma_of(key));
      row_ce[static_cast<std::size_t>(i)] = ce_i;
      row_w[static_cast<std::size_t>(i)] = weight;
      w(i, 0) = static_cast<S>(weight / total_predicted);
    }
    result.per_position_ce.push_back(std::move(row_ce));
    result.focal_weights.push_back(std::move(row_w));
    Var<S> row_total = dot_const(t, rd.ce.per_position, std::move(w));
    total = total.valid() ? add(t, total, row_total) : row_total;
  }
  result.total = total;
  result.value = static_cast<double>(t.value(total)(0, 0));
  return result;
}

/// Masked-prediction loss on a monolingual batch (plain CE).
template <class S>
LossResult<S> mmlm_loss(Tape<S>& t, const BoundModel<S>& bm, const Batch& batch,
                        const ForwardOptions& fwd_opts = {}) {
  if (batch.data_type != DataType::mono) {
    throw DataError("mmlm_loss expects a monolingual batch");
  }
  ReweightState unused;
  return total_loss(t, bm, batch, unused, LossMode::plain_ce, fwd_opts);
}

/// Masked-prediction loss on a bilingual batch (plain CE); both halves'
/// predicted positions contribute, grouped per language.
template <class S>
LossResult<S> trans_loss(Tape<S>& t, const BoundModel<S>& bm, const Batch& batch,
                         const ForwardOptions& fwd_opts = {}) {
  if (batch.data_type != DataType::bilingual) {
    throw DataError("trans_loss expects a bilingual batch");
  }
  ReweightState unused;
  return total_loss(t, bm, batch, unused, LossMode::plain_ce, fwd_opts);
}

/// Applies one batch's group means to the gate state.
template <class S>
void update_reweight_state(ReweightState& state, const LossResult<S>& result,
                           long long step) {
  for (const LossGroup& g : result.groups) {
    state.update(g.key, g.mean_ce, step);
  }
}

}  // namespace dattn
