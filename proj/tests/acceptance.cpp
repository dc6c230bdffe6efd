// Acceptance checks for the decomposed-attention laboratory. Each check
// prints one PASS/FAIL line (plus indented detail); the exit status is the
// number of failed checks.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dattn/analysis.hpp"
#include "dattn/finite_diff.hpp"
#include "dattn/probes.hpp"
#include "dattn/trainer.hpp"

namespace fs = std::filesystem;
using namespace dattn;

namespace {

struct CheckResult {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof buf, pattern, args);
  va_end(args);
  return buf;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

std::string join_seeds(const std::vector<double>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out += fmt("%s%.3f", i ? " " : "", xs[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

// Two hand-built bilingual rows over a 23-token vocabulary (2 languages x 9
// words): [BOS] x x [SEP] | y y y [EOS], with predicted positions in both
// segments so both (language, data-type) groups appear in the loss.
Batch two_row_bilingual() {
  Batch batch;
  batch.data_type = DataType::bilingual;
  auto layout = [] {
    SegmentLayout lay;
    lay.n = 8;
    lay.boundary = 4;
    lay.lang_x = 0;
    lay.lang_y = 1;
    lay.bos_pos = 0;
    lay.sep_pos = 3;
    lay.eos_pos = 7;
    lay.real.assign(8, true);
    return lay;
  };

  MaskingPlan p0;
  p0.original = {1, 5, 6, 3, 14, 15, 16, 2};
  p0.input_tokens = {1, Vocabulary::kMask, 6, 3, 14, 15, 16, 2};
  p0.targets = {-1, 5, -1, -1, -1, 15, -1, -1};
  p0.actions.assign(8, MaskAction::KEEP_VISIBLE);
  p0.actions[1] = MaskAction::MASK_TOKEN;
  p0.actions[5] = MaskAction::KEEP_BUT_PREDICT;
  batch.rows.push_back(p0.input_tokens);
  batch.layouts.push_back(layout());
  batch.plans.push_back(p0);
  batch.gold.push_back({{1, 4}, {2, 5}});

  MaskingPlan p1;
  p1.original = {1, 7, 8, 3, 17, 18, 19, 2};
  p1.input_tokens = {1, 7, Vocabulary::kMask, 3, 20, 18, 19, 2};
  p1.targets = {-1, -1, 8, -1, 17, -1, -1, 19};
  p1.actions.assign(8, MaskAction::KEEP_VISIBLE);
  p1.actions[2] = MaskAction::MASK_TOKEN;
  p1.actions[4] = MaskAction::RANDOM_TOKEN;
  p1.actions[7] = MaskAction::KEEP_BUT_PREDICT;
  batch.rows.push_back(p1.input_tokens);
  batch.layouts.push_back(layout());
  batch.plans.push_back(p1);
  batch.gold.push_back({{1, 4}, {2, 5}});

  return batch;
}

ModelConfig grad_check_config() {
  ModelConfig cfg;
  cfg.vocab_size = 23;
  cfg.d_model = 8;
  cfg.d_k = 4;
  cfg.num_heads = 2;
  cfg.num_layers = 2;
  cfg.ffn_dim = 16;
  cfg.max_positions = 12;
  cfg.num_languages = 2;
  cfg.embedding_dim = 8;
  cfg.dropout_p = 0.0;
  cfg.variant = variant_da();
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// 1. Gradient soundness
// ---------------------------------------------------------------------------

// The focal weights are gradient-stopped, so the reference function for
// finite differences keeps them frozen at their values from the analytic
// pass: f(theta) = sum_i w_i * ce_i(theta) / N.
double frozen_weight_loss(const Model<double>& model, const Batch& batch,
                          const std::vector<std::vector<double>>& weights,
                          int predicted) {
  Tape<double> t;
  BoundModel<double> bm = bind_model(t, model, /*requires_grad=*/false);
  double sum = 0.0;
  for (int r = 0; r < batch.size(); ++r) {
    const auto ur = static_cast<std::size_t>(r);
    Var<double> hidden =
        encoder_forward(t, bm, batch.rows[ur], batch.layouts[ur], {});
    Var<double> logits = lm_head(t, bm, hidden);
    CrossEntropyOut<double> ce =
        cross_entropy_logits(t, logits, batch.plans[ur].targets, kIgnoreIndex);
    const MatD& per = t.value(ce.per_position);
    for (int i = 0; i < batch.layouts[ur].n; ++i) {
      sum += weights[ur][static_cast<std::size_t>(i)] *
             per(static_cast<Eigen::Index>(i), 0);
    }
  }
  return sum / predicted;
}

CheckResult check_gradients() {
  ModelConfig cfg = grad_check_config();
  std::mt19937_64 rng(7);
  Model<double> model = init_model<double>(cfg, rng);
  Batch batch = two_row_bilingual();

  double worst = 0.0;
  std::string worst_name = "-";
  int groups_checked = 0;
  for (bool open : {false, true}) {
    ReweightState state;
    state.cfg.alpha = 0.25;
    state.cfg.gamma = 2.0;
    if (open) {
      state.cfg.loss_threshold = 100.0;
      state.cfg.step_threshold = 0;
      state.update({0, DataType::bilingual}, 0.5, 1);
      state.update({1, DataType::bilingual}, 0.5, 1);
    }

    Tape<double> t;
    BoundModel<double> bm = bind_model(t, model, /*requires_grad=*/true);
    LossResult<double> res =
        total_loss(t, bm, batch, state, LossMode::adaptive_fl);
    for (const LossGroup& g : res.groups) {
      double expect = open ? state.cfg.gamma : 0.0;
      if (g.gamma_l != expect) {
        return {false, fmt("gate state broken: gamma_l %.1f, expected %.1f",
                           g.gamma_l, expect)};
      }
    }
    t.backward(res.total);

    const double h = 1e-5;
    for (const auto& [name, var] : bm.vars) {
      MatD analytic = t.grad(var);
      MatD& theta = model.params.at(name);
      ++groups_checked;
      for (Eigen::Index i = 0; i < theta.rows(); ++i) {
        for (Eigen::Index j = 0; j < theta.cols(); ++j) {
          const double orig = theta(i, j);
          theta(i, j) = orig + h;
          double fp = frozen_weight_loss(model, batch, res.focal_weights,
                                         res.predicted_positions);
          theta(i, j) = orig - h;
          double fm = frozen_weight_loss(model, batch, res.focal_weights,
                                         res.predicted_positions);
          theta(i, j) = orig;
          double numeric = (fp - fm) / (2.0 * h);
          double rel = std::abs(analytic(i, j) - numeric) /
                       (std::abs(analytic(i, j)) + std::abs(numeric) + kFdGuard);
          if (rel > worst) {
            worst = rel;
            worst_name = (open ? "open/" : "closed/") + name;
          }
        }
      }
    }
  }
  return {worst < 1e-4, fmt("worst rel err %.2e at %s over %d tensor passes",
                            worst, worst_name.c_str(), groups_checked)};
}

// ---------------------------------------------------------------------------
// 2. Attention masking invariants
// ---------------------------------------------------------------------------

CheckResult check_attention_masks() {
  ModelConfig cfg;
  cfg.vocab_size = 105;
  cfg.d_model = 16;
  cfg.d_k = 8;
  cfg.num_heads = 2;
  cfg.num_layers = 2;
  cfg.ffn_dim = 32;
  cfg.max_positions = 24;
  cfg.num_languages = 2;
  cfg.embedding_dim = 16;
  cfg.dropout_p = 0.0;
  cfg.variant = variant_da();
  cfg.validate();
  std::mt19937_64 init_rng(11);
  Model<float> model = init_model<float>(cfg, init_rng);

  std::mt19937_64 rng(2);
  long long rows_checked = 0;
  double worst_row_sum_err = 0.0;
  for (int b = 0; b < 1000; ++b) {
    for (int row = 0; row < 2; ++row) {
      const int k = 1 + static_cast<int>(rng() % 7);
      const int m = 1 + static_cast<int>(rng() % 7);
      const int padx = static_cast<int>(rng() % 3);
      const int pady = static_cast<int>(rng() % 3);
      SegmentLayout lay;
      lay.boundary = 2 + k + padx;
      lay.n = lay.boundary + m + 1 + pady;
      lay.lang_x = 0;
      lay.lang_y = 1;
      lay.bos_pos = 0;
      lay.sep_pos = 1 + k;
      lay.eos_pos = lay.boundary + m;
      lay.real.assign(static_cast<std::size_t>(lay.n), true);
      for (int i = lay.sep_pos + 1; i < lay.boundary; ++i) lay.real[i] = false;
      for (int i = lay.eos_pos + 1; i < lay.n; ++i) lay.real[i] = false;
      std::vector<int> tokens(static_cast<std::size_t>(lay.n),
                              Vocabulary::kPad);
      tokens[0] = Vocabulary::kBos;
      for (int i = 1; i <= k; ++i) tokens[i] = 5 + static_cast<int>(rng() % 100);
      tokens[static_cast<std::size_t>(lay.sep_pos)] = Vocabulary::kSep;
      for (int i = 0; i < m; ++i) {
        tokens[static_cast<std::size_t>(lay.boundary + i)] =
            5 + static_cast<int>(rng() % 100);
      }
      tokens[static_cast<std::size_t>(lay.eos_pos)] = Vocabulary::kEos;

      Tape<float> t;
      BoundModel<float> bm = bind_model(t, model, /*requires_grad=*/false);
      std::vector<AttentionRecord> records;
      ForwardOptions opts;
      opts.records = &records;
      encoder_forward(t, bm, tokens, lay, opts);
      if (records.size() != 2 * static_cast<std::size_t>(cfg.num_layers)) {
        return {false, fmt("expected %d records per row, got %zu",
                           2 * cfg.num_layers, records.size())};
      }
      for (const AttentionRecord& rec : records) {
        for (const MatD& p : rec.head_probs) {
          for (int q = 0; q < lay.n; ++q) {
            double total = 0.0;
            for (int c = 0; c < lay.n; ++c) {
              const double v = p(q, c);
              total += v;
              const bool same_seg = lay.segment_of(c) == lay.segment_of(q);
              const bool forbidden =
                  !lay.real[static_cast<std::size_t>(c)] ||
                  (rec.tag == AttnTag::IA ? !same_seg : same_seg);
              if (forbidden && v != 0.0) {
                return {false,
                        fmt("%s leaked %.3e at (%d,%d) in a %d-long row",
                            rec.tag == AttnTag::IA ? "intra" : "cross", v, q,
                            c, lay.n)};
              }
            }
            worst_row_sum_err = std::max(worst_row_sum_err,
                                         std::abs(total - 1.0));
            ++rows_checked;
          }
        }
      }
    }
  }
  return {worst_row_sum_err < 1e-5,
          fmt("2000 rows, %lld attention rows, worst row-sum err %.2e",
              rows_checked, worst_row_sum_err)};
}

// ---------------------------------------------------------------------------
// 3. Focal/adaptive loss reductions
// ---------------------------------------------------------------------------

CheckResult check_loss_reductions() {
  ModelConfig cfg = grad_check_config();
  std::mt19937_64 rng(13);
  Model<float> model = init_model<float>(cfg, rng);
  Batch batch = two_row_bilingual();

  auto run = [&](LossMode mode, const ReweightState& st) {
    Tape<float> t;
    BoundModel<float> bm = bind_model(t, model, /*requires_grad=*/false);
    return total_loss(t, bm, batch, st, mode);
  };
  auto weights_equal = [](const LossResult<float>& a,
                          const LossResult<float>& b) {
    return a.focal_weights == b.focal_weights;
  };

  // plain CE == adaptive focal with (alpha=1, gamma=0), bitwise
  ReweightState unit;
  unit.cfg.alpha = 1.0;
  unit.cfg.gamma = 0.0;
  LossResult<float> plain = run(LossMode::plain_ce, unit);
  LossResult<float> degenerate = run(LossMode::adaptive_fl, unit);
  if (std::memcmp(&plain.value, &degenerate.value, sizeof(double)) != 0 ||
      !weights_equal(plain, degenerate)) {
    return {false, fmt("plain %.17g != adaptive(1,0) %.17g", plain.value,
                       degenerate.value)};
  }

  // adaptive with every gate closed == alpha x plain CE, within 1e-6
  ReweightState closed;
  closed.cfg.alpha = 0.25;
  closed.cfg.gamma = 2.0;
  LossResult<float> gated = run(LossMode::adaptive_fl, closed);
  const double want = 0.25 * plain.value;
  const double scaled_err = std::abs(gated.value - want) /
                            std::max(1.0, std::abs(want));
  if (scaled_err > 1e-6) {
    return {false, fmt("closed-gate %.9g vs alpha*plain %.9g (err %.2e)",
                       gated.value, want, scaled_err)};
  }

  // naive focal == adaptive focal with gates forced open, bitwise
  ReweightState open;
  open.cfg.alpha = 0.25;
  open.cfg.gamma = 2.0;
  open.cfg.loss_threshold = 100.0;
  open.cfg.step_threshold = 0;
  open.update({0, DataType::bilingual}, 0.5, 1);
  open.update({1, DataType::bilingual}, 0.5, 1);
  LossResult<float> naive = run(LossMode::naive_fl, open);
  LossResult<float> forced = run(LossMode::adaptive_fl, open);
  if (std::memcmp(&naive.value, &forced.value, sizeof(double)) != 0 ||
      !weights_equal(naive, forced)) {
    return {false, fmt("naive %.17g != forced-open %.17g", naive.value,
                       forced.value)};
  }

  return {true, fmt("plain %.6f, closed-gate err %.1e, naive==forced-open",
                    plain.value, scaled_err)};
}

// ---------------------------------------------------------------------------
// 4. Re-weighting gate state machine
// ---------------------------------------------------------------------------

CheckResult check_reweight_gate() {
  ReweightConfig cfg;
  cfg.alpha = 0.25;
  cfg.gamma = 2.0;
  cfg.loss_threshold = 0.8;
  cfg.step_threshold = 10;
  cfg.ema_decay = 0.99;
  const GroupKey key{0, DataType::bilingual};

  struct Case {
    double mean_ce;
    long long step;
    double expect;
  };
  const Case grid[] = {
      {0.5, 20, 2.0},  // low loss, past the step threshold: open
      {0.5, 5, 0.0},   // low loss, too early: closed
      {1.0, 20, 0.0},  // high loss, past the threshold: closed
      {1.0, 5, 0.0},   // high loss, too early: closed
  };
  for (const Case& c : grid) {
    ReweightState state;
    state.cfg = cfg;
    state.update(key, c.mean_ce, c.step);
    if (state.gamma_for(key) != c.expect) {
      return {false, fmt("ema %.1f step %lld gave gamma %.1f, expected %.1f",
                         c.mean_ce, c.step, state.gamma_for(key), c.expect)};
    }
  }

  // an open gate re-closes when the EMA climbs back above the threshold,
  // and re-opens once it falls again (no hysteresis)
  ReweightState state;
  state.cfg = cfg;
  state.update(key, 0.5, 20);
  if (state.gamma_for(key) != 2.0) return {false, "gate failed to open"};
  int steps_to_close = 0;
  while (state.gamma_for(key) != 0.0 && steps_to_close < 1000) {
    state.update(key, 5.0, 21 + steps_to_close);
    ++steps_to_close;
  }
  if (state.gamma_for(key) != 0.0) {
    return {false, "gate never re-closed on a rising EMA"};
  }
  int steps_to_reopen = 0;
  while (state.gamma_for(key) != 2.0 && steps_to_reopen < 2000) {
    state.update(key, 0.1, 1021 + steps_to_reopen);
    ++steps_to_reopen;
  }
  if (state.gamma_for(key) != 2.0) {
    return {false, "gate never re-opened on a falling EMA"};
  }
  return {true, fmt("2x2 grid exact; re-closed after %d high updates, "
                    "re-opened after %d low ones",
                    steps_to_close, steps_to_reopen)};
}

// ---------------------------------------------------------------------------
// 5. Masking statistics
// ---------------------------------------------------------------------------

CheckResult check_masking_statistics() {
  Vocabulary vocab;
  vocab.num_languages = 2;
  vocab.lexicon_size = 50;
  std::mt19937_64 rng(31);

  const int rows = 2500;
  const int len = 50;  // 48 maskable positions per row -> 120k candidates
  long long eligible = 0, selected = 0, masked = 0, randomized = 0, kept = 0;
  for (int r = 0; r < rows; ++r) {
    std::vector<int> tokens(len);
    std::vector<bool> maskable(len, true);
    tokens[0] = Vocabulary::kBos;
    tokens[len - 1] = Vocabulary::kEos;
    maskable[0] = maskable[len - 1] = false;
    for (int i = 1; i < len - 1; ++i) {
      tokens[static_cast<std::size_t>(i)] = 5 + static_cast<int>(rng() % 50);
    }
    MaskingPlan plan =
        plan_masking(tokens, maskable, 0.15, Vocabulary::kMask,
                     vocab.first_content_id(), vocab.size(), rng);
    eligible += len - 2;
    for (MaskAction a : plan.actions) {
      switch (a) {
        case MaskAction::KEEP_VISIBLE: break;
        case MaskAction::MASK_TOKEN: ++selected; ++masked; break;
        case MaskAction::RANDOM_TOKEN: ++selected; ++randomized; break;
        case MaskAction::KEEP_BUT_PREDICT: ++selected; ++kept; break;
      }
    }
  }
  const double rate = static_cast<double>(selected) / eligible;
  const double frac_mask = static_cast<double>(masked) / selected;
  const double frac_rand = static_cast<double>(randomized) / selected;
  const double frac_keep = static_cast<double>(kept) / selected;
  const bool ok = std::abs(rate - 0.15) <= 0.005 &&
                  std::abs(frac_mask - 0.8) <= 0.01 &&
                  std::abs(frac_rand - 0.1) <= 0.01 &&
                  std::abs(frac_keep - 0.1) <= 0.01;
  return {ok, fmt("%lld candidates: rate %.4f, split %.3f/%.3f/%.3f",
                  eligible, rate, frac_mask, frac_rand, frac_keep)};
}

// ---------------------------------------------------------------------------
// 6. Parameter-count relations
// ---------------------------------------------------------------------------

CheckResult check_param_relations() {
  ParamRelations desk =
      param_relations(desk_config(VariantKind::MA), desk_config(VariantKind::DA),
                      desk_config(VariantKind::DA_REDUCE),
                      desk_config(VariantKind::DA_SHARE));
  ParamRelations base = param_relations(
      full_scale_config(VariantKind::MA), full_scale_config(VariantKind::DA),
      full_scale_config(VariantKind::DA_REDUCE),
      full_scale_config(VariantKind::DA_SHARE));
  const bool ok = desk.all_hold() && base.all_hold();
  return {ok, fmt("desk ma/da/reduce/share %lld/%lld/%lld/%lld; "
                  "base %.1fM/%.1fM/%.1fM/%.1fM",
                  desk.ma, desk.da, desk.da_reduce, desk.da_share,
                  base.ma / 1e6, base.da / 1e6, base.da_reduce / 1e6,
                  base.da_share / 1e6)};
}

// ---------------------------------------------------------------------------
// 7-9. Trained-model properties (shared 16-run grid)
// ---------------------------------------------------------------------------

// Training restricted to the base language and its block-reversed cipher:
// monolingual corpora for both plus the one parallel corpus that pairs them.
Model<float> train_base_vs_reversed(VariantKind kind, std::uint64_t seed,
                                    const TrainConfig& tcfg,
                                    const DeskData& data) {
  ModelConfig mcfg = desk_config(kind);
  std::vector<MonoCorpus> mono = {data.mono[0], data.mono[2]};
  std::vector<ParallelCorpus> bi = {data.parallel[1]};
  BatchConfig bcfg;
  bcfg.mono_len = tcfg.mono_len;
  bcfg.max_half_len = tcfg.max_half_len;
  bcfg.mask_rate = tcfg.mask_rate;
  ScheduleConfig sched;
  sched.batch_size = tcfg.batch_size;
  sched.mono_ratio = tcfg.mono_ratio;
  sched.bi_ratio = tcfg.bi_ratio;
  BatchScheduler scheduler(mono, bi, data.vocab, bcfg, sched, seed);

  std::mt19937_64 init_rng(seed);
  std::mt19937_64 data_rng(seed + 1);
  std::mt19937_64 dropout_rng(seed + 2);
  Model<float> model = init_model<float>(mcfg, init_rng);
  OptimizerConfig ocfg = tcfg.optimizer_config();
  OptimizerState<float> opt;
  ReweightState reweight;
  reweight.cfg = tcfg.reweight_config();

  for (int step = 0; step < tcfg.total_steps; ++step) {
    Batch batch = scheduler.next(data_rng);
    Tape<float> tape;
    BoundModel<float> bound = bind_model(tape, model, /*requires_grad=*/true);
    ForwardOptions opts;
    opts.training = true;
    opts.dropout_rng = &dropout_rng;
    LossResult<float> result =
        total_loss(tape, bound, batch, reweight, LossMode::plain_ce, opts);
    if (!result.no_supervised) {
      tape.backward(result.total);
      std::map<std::string, MatF> grads;
      for (const auto& [name, var] : bound.vars) {
        grads.emplace(name, tape.grad(var));
      }
      clip_global_norm(grads, ocfg.clip_norm);
      const double lr = lr_schedule(opt.step, ocfg);
      optimizer_step(model.params, grads, opt, ocfg, lr);
    } else {
      opt.step += 1;
    }
    update_reweight_state(reweight, result, step + 1);
  }
  return model;
}

struct AlignmentEval {
  double accuracy = 0.0;
  double chance = 0.0;  // mean 1/candidates over the scored rows
  int rows = 0;
};

AlignmentEval eval_alignment(const Model<float>& model,
                             const ParallelCorpus& pairs,
                             const Vocabulary& vocab, const BatchConfig& bcfg,
                             AttnTag tag) {
  std::size_t cursor = 0;
  std::mt19937_64 rng(4242);
  AlignmentEval out;
  int hits = 0;
  double chance_sum = 0.0;
  const int n_batches = static_cast<int>(pairs.examples.size()) / 16;
  for (int b = 0; b < n_batches; ++b) {
    Batch batch = make_bilingual_batch(pairs, cursor, 16, vocab, bcfg, rng);
    for (const SequenceRecords& seq : collect_records(model, batch)) {
      if (seq.gold.empty()) continue;
      AlignmentScore s = alignment_accuracy(last_record_of(seq, tag), seq.gold);
      out.rows += s.rows_evaluated;
      hits += s.hits;
      int cx = 0, cy = 0;
      for (int i = 0; i < seq.layout.n; ++i) {
        if (!seq.layout.is_content(i)) continue;
        (seq.layout.segment_of(i) == 0 ? cx : cy) += 1;
      }
      chance_sum += static_cast<double>(seq.gold.size()) * (1.0 / cy + 1.0 / cx);
    }
  }
  out.accuracy = out.rows ? static_cast<double>(hits) / out.rows : 0.0;
  out.chance = out.rows ? chance_sum / out.rows : 0.0;
  return out;
}

struct GridResults {
  bool ready = false;
  std::string error = "trained grid unavailable";
  std::vector<double> da_align, ma_align;
  std::vector<double> ma_intra;  // per-seed mean intra mass over all layers
  std::vector<double> da_probe, ma_probe;
  double chance = 0.0;
  double train_seconds = 0.0;
};

GridResults g_grid;

void run_training_grid() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig tcfg;
  tcfg.total_steps = 2400;
  tcfg.warmup_steps = 240;
  tcfg.lr = 2e-3;
  tcfg.mask_rate = 0.20;
  DeskData data = build_desk_data(tcfg);

  BatchConfig eval_cfg;
  eval_cfg.max_half_len = tcfg.max_half_len;
  eval_cfg.mask_rate = 0.0;
  ParallelCorpus align_pairs =
      build_eval_parallel(tcfg, data.spec_a, data.spec_c, data.vocab, 192, 777);
  ParallelCorpus probe_train =
      build_eval_parallel(tcfg, data.spec_a, data.spec_b, data.vocab, 512, 888);
  ParallelCorpus probe_eval =
      build_eval_parallel(tcfg, data.spec_a, data.spec_c, data.vocab, 384, 999);

  for (VariantKind kind : {VariantKind::DA, VariantKind::MA}) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      Model<float> model = train_base_vs_reversed(kind, seed, tcfg, data);
      const AttnTag tag =
          kind == VariantKind::MA ? AttnTag::MA : AttnTag::CA;
      AlignmentEval align =
          eval_alignment(model, align_pairs, data.vocab, eval_cfg, tag);
      g_grid.chance = align.chance;
      ProbeResult probe = probe_pair_classification(model, probe_train,
                                                    probe_eval, eval_cfg,
                                                    seed + 50);
      if (kind == VariantKind::DA) {
        g_grid.da_align.push_back(align.accuracy);
        g_grid.da_probe.push_back(probe.eval_accuracy);
        std::printf("    da seed %llu: align %.4f probe %.4f\n",
                    static_cast<unsigned long long>(seed), align.accuracy,
                    probe.eval_accuracy);
      } else {
        // intra/cross mass pooled over every mixed-attention record row
        std::size_t cursor = 0;
        std::mt19937_64 rng(4242);
        double intra_sum = 0.0;
        long long intra_rows = 0;
        const int n_batches =
            static_cast<int>(align_pairs.examples.size()) / 16;
        for (int b = 0; b < n_batches; ++b) {
          Batch batch =
              make_bilingual_batch(align_pairs, cursor, 16, data.vocab,
                                   eval_cfg, rng);
          for (const SequenceRecords& seq : collect_records(model, batch)) {
            for (const AttentionRecord& rec : seq.records) {
              if (rec.tag != AttnTag::MA) continue;
              MassBalance mb = mass_balance(rec);
              for (const MassRow& row : mb.rows) {
                intra_sum += row.intra;
                ++intra_rows;
              }
            }
          }
        }
        g_grid.ma_align.push_back(align.accuracy);
        g_grid.ma_intra.push_back(intra_sum / intra_rows);
        g_grid.ma_probe.push_back(probe.eval_accuracy);
        std::printf("    ma seed %llu: align %.4f intra %.4f probe %.4f\n",
                    static_cast<unsigned long long>(seed), align.accuracy,
                    intra_sum / intra_rows, probe.eval_accuracy);
      }
      std::fflush(stdout);
    }
  }
  g_grid.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  g_grid.ready = true;
}

CheckResult check_alignment_emergence() {
  if (!g_grid.ready) return {false, g_grid.error};
  const double da = mean_of(g_grid.da_align);
  const double ma = mean_of(g_grid.ma_align);
  const bool ok = da > ma && da > g_grid.chance && ma > g_grid.chance &&
                  da >= 0.8;
  return {ok, fmt("mean cross-attention align %.4f (da) vs %.4f (ma), "
                  "chance %.4f, grid %.0fs [da: %s] [ma: %s]",
                  da, ma, g_grid.chance, g_grid.train_seconds,
                  join_seeds(g_grid.da_align).c_str(),
                  join_seeds(g_grid.ma_align).c_str())};
}

CheckResult check_mass_balance_preference() {
  if (!g_grid.ready) return {false, g_grid.error};
  const double intra = mean_of(g_grid.ma_intra);
  return {intra > 1.0 - intra,
          fmt("ma mean intra mass %.4f vs cross %.4f [per seed: %s]", intra,
              1.0 - intra, join_seeds(g_grid.ma_intra).c_str())};
}

CheckResult check_probe_transfer() {
  if (!g_grid.ready) return {false, g_grid.error};
  const double da = mean_of(g_grid.da_probe);
  const double ma = mean_of(g_grid.ma_probe);
  return {da >= ma, fmt("zero-shot pair probe %.4f (da) vs %.4f (ma) "
                        "[da: %s] [ma: %s]",
                        da, ma, join_seeds(g_grid.da_probe).c_str(),
                        join_seeds(g_grid.ma_probe).c_str())};
}

// ---------------------------------------------------------------------------
// 10. Determinism and persistence
// ---------------------------------------------------------------------------

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckResult check_determinism() {
  ModelConfig mcfg;
  mcfg.vocab_size = 155;
  mcfg.d_model = 16;
  mcfg.d_k = 8;
  mcfg.num_heads = 2;
  mcfg.num_layers = 1;
  mcfg.ffn_dim = 32;
  mcfg.max_positions = 20;
  mcfg.num_languages = 3;
  mcfg.embedding_dim = 16;
  mcfg.variant = variant_da();
  mcfg.validate();

  TrainConfig tcfg;
  tcfg.lexicon_size = 50;
  tcfg.mono_sentences = 200;
  tcfg.parallel_pairs = 200;
  tcfg.batch_size = 4;
  tcfg.total_steps = 40;
  tcfg.warmup_steps = 8;

  const fs::path base = fs::temp_directory_path() / "dattn_acceptance";
  fs::remove_all(base);
  fs::create_directories(base);
  const std::uint64_t seed = 7;

  Trainer(mcfg, tcfg, LossMode::adaptive_fl, seed, (base / "a").string()).run();
  Trainer(mcfg, tcfg, LossMode::adaptive_fl, seed, (base / "b").string()).run();
  if (file_bytes(base / "a" / "checkpoint.bin") !=
          file_bytes(base / "b" / "checkpoint.bin") ||
      file_bytes(base / "a" / "state.bin") !=
          file_bytes(base / "b" / "state.bin")) {
    return {false, "two identical runs differ"};
  }

  Trainer(mcfg, tcfg, LossMode::adaptive_fl, seed, (base / "c").string())
      .run(30);
  Trainer::resume((base / "c").string()).run();
  if (file_bytes(base / "a" / "checkpoint.bin") !=
          file_bytes(base / "c" / "checkpoint.bin") ||
      file_bytes(base / "a" / "state.bin") !=
          file_bytes(base / "c" / "state.bin")) {
    return {false, "resumed run diverged from the uninterrupted one"};
  }

  // heatmap CSV round-trip on a real cross-attention record
  DeskData data = build_desk_data(tcfg);
  std::mt19937_64 init_rng(3);
  Model<float> model = init_model<float>(mcfg, init_rng);
  BatchConfig bcfg;
  bcfg.mask_rate = 0.0;
  std::size_t cursor = 0;
  std::mt19937_64 rng(5);
  Batch batch = make_bilingual_batch(data.parallel[1], cursor, 4, data.vocab,
                                     bcfg, rng);
  SequenceRecords seq = collect_records(model, batch)[0];
  const AttentionRecord& rec = last_record_of(seq, AttnTag::CA);
  HeatmapFiles files = export_heatmap(rec, seq.tokens, data.vocab, seq.gold,
                                      (base / "heat").string());
  HeatmapCsv csv = read_heatmap_csv(files.csv_path);
  MatD expect = rec.head_average();
  if (csv.probs.rows() != expect.rows() || csv.probs.cols() != expect.cols()) {
    return {false, "heatmap round-trip changed the grid shape"};
  }
  const double err = (csv.probs - expect).cwiseAbs().maxCoeff();
  if (err > 1e-6) {
    return {false, fmt("heatmap round-trip err %.2e", err)};
  }
  return {true, fmt("reruns and resume byte-identical; heatmap round-trip "
                    "err %.1e", err)};
}

}  // namespace

int main() {
  struct Check {
    int id;
    const char* label;
    std::function<CheckResult()> fn;
  };
  const Check checks[] = {
      {1, "gradient-check", check_gradients},
      {2, "attention-masking", check_attention_masks},
      {3, "loss-reductions", check_loss_reductions},
      {4, "reweight-gate", check_reweight_gate},
      {5, "masking-statistics", check_masking_statistics},
      {6, "parameter-relations", check_param_relations},
      {7, "alignment-emergence", check_alignment_emergence},
      {8, "attention-mass-balance", check_mass_balance_preference},
      {9, "zero-shot-probe-transfer", check_probe_transfer},
      {10, "determinism-persistence", check_determinism},
  };

  int failures = 0;
  for (const Check& check : checks) {
    if (check.id == 7) {
      std::printf("  training 2x8 desk models (base vs block-reversed "
                  "cipher)...\n");
      std::fflush(stdout);
      try {
        run_training_grid();
      } catch (const std::exception& e) {
        g_grid.error = fmt("grid training failed: %s", e.what());
      }
    }
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult result;
    try {
      result = check.fn();
    } catch (const std::exception& e) {
      result = {false, fmt("exception: %s", e.what())};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::printf("[%s] %2d %s: %s (%.1fs)\n", result.ok ? "PASS" : "FAIL",
                check.id, check.label, result.detail.c_str(), secs);
    std::fflush(stdout);
    if (!result.ok) ++failures;
  }
  std::printf("%d/10 checks passed\n", 10 - failures);
  return failures;
}
