#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include "dattn/checkpoint.hpp"
#include "dattn/corpus.hpp"
#include "dattn/objectives.hpp"
#include "dattn/optimizer.hpp"

namespace dattn {

/// Flat training configuration (key=value file format). Model architecture
/// is configured separately via ModelConfig.
struct TrainConfig {
  // corpus
  int lexicon_size = 96;
  double zipf_exponent = 1.1;
  std::uint64_t corpus_seed = 90210;
  int mono_sentences = 3000;   // per language
  int parallel_pairs = 3000;   // per language pair
  int mono_len = 20;
  int max_half_len = 10;
  double mask_rate = 0.15;
  int batch_size = 16;
  int mono_ratio = 1;
  int bi_ratio = 1;
  // objective re-weighting
  double alpha = 0.25;
  double gamma = 2.0;
  double loss_threshold = 0.8;
  long long step_threshold = -1;  // -1: resolved to 3/4 of total_steps
  double ema_decay = 0.99;
  // optimizer
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 80;
  int total_steps = 800;
  double clip_norm = 1.0;
  // logging / safety
  int log_every = 10;
  int checkpoint_every = 0;  // 0: final checkpoint only
  double divergence_factor = 10.0;
  int divergence_patience = 100;

  void validate() const;
  long long resolved_step_threshold() const {
    return step_threshold >= 0 ? step_threshold : (3LL * total_steps) / 4;
  }
  OptimizerConfig optimizer_config() const;
  ReweightConfig reweight_config() const;

  std::string serialize() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig parse_file(const std::string& path);
};

/// The three-language desk setup: language 0 keeps the base lexicon and
/// order, language 1 is a same-order cipher, language 2 is a cipher with
/// fully reversed word order. Parallel data pairs language 0 with each of
/// the others. Deterministic in corpus_seed.
struct DeskData {
  GrammarConfig grammar;
  Vocabulary vocab;
  ToyLanguageSpec spec_a, spec_b, spec_c;
  std::vector<MonoCorpus> mono;         // for languages 0, 1, 2
  std::vector<ParallelCorpus> parallel; // (0,1) and (0,2)
};

DeskData build_desk_data(const TrainConfig& cfg);

/// Held-out parallel examples (same language specs, fresh sentences).
ParallelCorpus build_eval_parallel(const TrainConfig& cfg,
                                   const ToyLanguageSpec& spec_a,
                                   const ToyLanguageSpec& spec_b,
                                   const Vocabulary& vocab, int num_examples,
                                   std::uint64_t seed_offset);

struct TrainOutcome {
  long long steps = 0;
  double final_loss = 0.0;
  std::string checkpoint_path;
  std::string state_path;
};

/// Owns one training run: model, optimizer, scheduler, re-weighting gate,
/// loss log, checkpoints, and divergence watchdog.
class Trainer {
 public:
  Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg, LossMode mode,
          std::uint64_t seed, const std::string& out_dir);

  /// Rebuilds a trainer from an out_dir written by a previous run and
  /// continues bitwise-identically from the stored step.
  static Trainer resume(const std::string& out_dir);

  /// Runs up to `steps` more updates (capped at total_steps). Returns the
  /// outcome after writing the final checkpoint and state.
  TrainOutcome run(long long steps = -1);

  const Model<float>& model() const { return model_; }
  Model<float>& mutable_model() { return model_; }
  const ReweightState& reweight() const { return reweight_; }
  long long step() const { return state_.step; }
  const TrainConfig& train_config() const { return tcfg_; }
  const DeskData& data() const { return *data_; }
  LossMode mode() const { return mode_; }
  std::uint64_t seed() const { return seed_; }

 private:
  Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg, LossMode mode,
          std::uint64_t seed, const std::string& out_dir, bool resuming);

  void write_manifest() const;
  void save(const std::string& suffix) const;
  void log_groups(const LossResult<float>& result);

  ModelConfig mcfg_;
  TrainConfig tcfg_;
  LossMode mode_;
  std::uint64_t seed_ = 0;
  std::filesystem::path out_dir_;
  Model<float> model_;
  std::unique_ptr<DeskData> data_;
  std::unique_ptr<BatchScheduler> scheduler_;
  TrainState state_;
  ReweightState reweight_;
  std::mt19937_64 data_rng_;
  std::mt19937_64 dropout_rng_;
  std::ofstream loss_log_;
};

LossMode loss_mode_from_cli(const std::string& objective);
std::string loss_mode_to_cli(LossMode mode);

}  // namespace dattn
