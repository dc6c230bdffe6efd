#include "dattn/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace dattn {

void TrainConfig::validate() const {
  if (lexicon_size < 50) throw ConfigError("lexicon_size must be >= 50");
  if (mono_sentences < 1 || parallel_pairs < 1) {
    throw ConfigError("corpus sizes must be positive");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (mask_rate < 0.0 || mask_rate >= 1.0) {
    throw ConfigError("mask_rate must lie in [0, 1)");
  }
  if (total_steps < 1) throw ConfigError("total_steps must be positive");
  if (log_every < 1) throw ConfigError("log_every must be positive");
  if (divergence_patience < 1) {
    throw ConfigError("divergence_patience must be positive");
  }
  if (!(divergence_factor > 1.0)) {
    throw ConfigError("divergence_factor must exceed 1");
  }
  optimizer_config().validate();
}

OptimizerConfig TrainConfig::optimizer_config() const {
  OptimizerConfig cfg;
  cfg.kind = optimizer;
  cfg.lr = lr;
  cfg.beta1 = beta1;
  cfg.beta2 = beta2;
  cfg.eps = eps;
  cfg.warmup_steps = warmup_steps;
  cfg.total_steps = total_steps;
  cfg.clip_norm = clip_norm;
  return cfg;
}

ReweightConfig TrainConfig::reweight_config() const {
  ReweightConfig cfg;
  cfg.alpha = alpha;
  cfg.gamma = gamma;
  cfg.loss_threshold = loss_threshold;
  cfg.step_threshold = resolved_step_threshold();
  cfg.ema_decay = ema_decay;
  return cfg;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim_ws(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

std::string TrainConfig::serialize() const {
  std::ostringstream out;
  out << "lexicon_size=" << lexicon_size << "\n";
  out << "zipf_exponent=" << fmt_double(zipf_exponent) << "\n";
  out << "corpus_seed=" << corpus_seed << "\n";
  out << "mono_sentences=" << mono_sentences << "\n";
  out << "parallel_pairs=" << parallel_pairs << "\n";
  out << "mono_len=" << mono_len << "\n";
  out << "max_half_len=" << max_half_len << "\n";
  out << "mask_rate=" << fmt_double(mask_rate) << "\n";
  out << "batch_size=" << batch_size << "\n";
  out << "mono_ratio=" << mono_ratio << "\n";
  out << "bi_ratio=" << bi_ratio << "\n";
  out << "alpha=" << fmt_double(alpha) << "\n";
  out << "gamma=" << fmt_double(gamma) << "\n";
  out << "loss_threshold=" << fmt_double(loss_threshold) << "\n";
  out << "step_threshold=" << step_threshold << "\n";
  out << "ema_decay=" << fmt_double(ema_decay) << "\n";
  out << "optimizer=" << to_string(optimizer) << "\n";
  out << "lr=" << fmt_double(lr) << "\n";
  out << "beta1=" << fmt_double(beta1) << "\n";
  out << "beta2=" << fmt_double(beta2) << "\n";
  out << "eps=" << fmt_double(eps) << "\n";
  out << "warmup_steps=" << warmup_steps << "\n";
  out << "total_steps=" << total_steps << "\n";
  out << "clip_norm=" << fmt_double(clip_norm) << "\n";
  out << "log_every=" << log_every << "\n";
  out << "checkpoint_every=" << checkpoint_every << "\n";
  out << "divergence_factor=" << fmt_double(divergence_factor) << "\n";
  out << "divergence_patience=" << divergence_patience << "\n";
  return out.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim_ws(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("train config line " + std::to_string(line_no) +
                        " is not key=value: '" + line + "'");
    }
    kv[trim_ws(line.substr(0, eq))] = trim_ws(line.substr(eq + 1));
  }
  TrainConfig cfg;  // defaults stand for missing keys
  auto take_int = [&](const char* key, int& field) {
    auto it = kv.find(key);
    if (it != kv.end()) {
      field = std::stoi(it->second);
      kv.erase(it);
    }
  };
  auto take_ll = [&](const char* key, long long& field) {
    auto it = kv.find(key);
    if (it != kv.end()) {
      field = std::stoll(it->second);
      kv.erase(it);
    }
  };
  auto take_u64 = [&](const char* key, std::uint64_t& field) {
    auto it = kv.find(key);
    if (it != kv.end()) {
      field = std::stoull(it->second);
      kv.erase(it);
    }
  };
  auto take_double = [&](const char* key, double& field) {
    auto it = kv.find(key);
    if (it != kv.end()) {
      field = std::stod(it->second);
      kv.erase(it);
    }
  };
  take_int("lexicon_size", cfg.lexicon_size);
  take_double("zipf_exponent", cfg.zipf_exponent);
  take_u64("corpus_seed", cfg.corpus_seed);
  take_int("mono_sentences", cfg.mono_sentences);
  take_int("parallel_pairs", cfg.parallel_pairs);
  take_int("mono_len", cfg.mono_len);
  take_int("max_half_len", cfg.max_half_len);
  take_double("mask_rate", cfg.mask_rate);
  take_int("batch_size", cfg.batch_size);
  take_int("mono_ratio", cfg.mono_ratio);
  take_int("bi_ratio", cfg.bi_ratio);
  take_double("alpha", cfg.alpha);
  take_double("gamma", cfg.gamma);
  take_double("loss_threshold", cfg.loss_threshold);
  take_ll("step_threshold", cfg.step_threshold);
  take_double("ema_decay", cfg.ema_decay);
  if (auto it = kv.find("optimizer"); it != kv.end()) {
    cfg.optimizer = optimizer_kind_from_string(it->second);
    kv.erase(it);
  }
  take_double("lr", cfg.lr);
  take_double("beta1", cfg.beta1);
  take_double("beta2", cfg.beta2);
  take_double("eps", cfg.eps);
  take_int("warmup_steps", cfg.warmup_steps);
  take_int("total_steps", cfg.total_steps);
  take_double("clip_norm", cfg.clip_norm);
  take_int("log_every", cfg.log_every);
  take_int("checkpoint_every", cfg.checkpoint_every);
  take_double("divergence_factor", cfg.divergence_factor);
  take_int("divergence_patience", cfg.divergence_patience);
  if (!kv.empty()) {
    throw ConfigError("train config has unknown key '" + kv.begin()->first +
                      "'");
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open train config '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

DeskData build_desk_data(const TrainConfig& cfg) {
  cfg.validate();
  DeskData data;
  data.grammar.lexicon_size = cfg.lexicon_size;
  data.grammar.zipf_exponent = cfg.zipf_exponent;
  data.vocab.num_languages = 3;
  data.vocab.lexicon_size = cfg.lexicon_size;
  data.spec_a = identity_language(0, data.grammar);
  data.spec_b = cipher_language(1, data.grammar, cfg.corpus_seed + 11, 0);
  data.spec_c = cipher_language(2, data.grammar, cfg.corpus_seed + 12, 1);
  const ToyLanguageSpec* specs[3] = {&data.spec_a, &data.spec_b, &data.spec_c};
  for (int lang = 0; lang < 3; ++lang) {
    auto base = generate_base_corpus(data.grammar, cfg.corpus_seed + 1000 + lang,
                                     cfg.mono_sentences);
    data.mono.push_back(build_mono_corpus(base, *specs[lang], data.vocab));
  }
  {
    auto base = generate_base_corpus(data.grammar, cfg.corpus_seed + 2001,
                                     cfg.parallel_pairs);
    data.parallel.push_back(
        build_parallel_corpus(base, data.spec_a, data.spec_b, data.vocab));
  }
  {
    auto base = generate_base_corpus(data.grammar, cfg.corpus_seed + 2002,
                                     cfg.parallel_pairs);
    data.parallel.push_back(
        build_parallel_corpus(base, data.spec_a, data.spec_c, data.vocab));
  }
  return data;
}

ParallelCorpus build_eval_parallel(const TrainConfig& cfg,
                                   const ToyLanguageSpec& spec_a,
                                   const ToyLanguageSpec& spec_b,
                                   const Vocabulary& vocab, int num_examples,
                                   std::uint64_t seed_offset) {
  GrammarConfig grammar;
  grammar.lexicon_size = cfg.lexicon_size;
  grammar.zipf_exponent = cfg.zipf_exponent;
  auto base = generate_base_corpus(grammar, cfg.corpus_seed + seed_offset,
                                   num_examples);
  return build_parallel_corpus(base, spec_a, spec_b, vocab);
}

LossMode loss_mode_from_cli(const std::string& objective) {
  if (objective == "ce") return LossMode::plain_ce;
  if (objective == "fl") return LossMode::naive_fl;
  if (objective == "adapt-fl") return LossMode::adaptive_fl;
  throw ConfigError("unknown objective '" + objective +
                    "' (expected ce, fl, or adapt-fl)");
}

std::string loss_mode_to_cli(LossMode mode) {
  switch (mode) {
    case LossMode::plain_ce: return "ce";
    case LossMode::naive_fl: return "fl";
    case LossMode::adaptive_fl: return "adapt-fl";
  }
  throw ConfigError("unknown loss mode");
}

Trainer::Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg,
                 LossMode mode, std::uint64_t seed, const std::string& out_dir)
    : Trainer(mcfg, tcfg, mode, seed, out_dir, /*resuming=*/false) {}

Trainer::Trainer(const ModelConfig& mcfg, const TrainConfig& tcfg,
                 LossMode mode, std::uint64_t seed, const std::string& out_dir,
                 bool resuming)
    : mcfg_(mcfg),
      tcfg_(tcfg),
      mode_(mode),
      seed_(seed),
      out_dir_(out_dir),
      data_rng_(seed + 1),
      dropout_rng_(seed + 2) {
  mcfg_.validate();
  tcfg_.validate();
  std::filesystem::create_directories(out_dir_);
  data_ = std::make_unique<DeskData>(build_desk_data(tcfg_));
  if (mcfg_.vocab_size != data_->vocab.size()) {
    throw ConfigError("model vocab_size " + std::to_string(mcfg_.vocab_size) +
                      " does not match the corpus vocabulary of " +
                      std::to_string(data_->vocab.size()));
  }
  ScheduleConfig sched;
  sched.batch_size = tcfg_.batch_size;
  sched.mono_ratio = tcfg_.mono_ratio;
  sched.bi_ratio = tcfg_.bi_ratio;
  scheduler_ = std::make_unique<BatchScheduler>(
      data_->mono, data_->parallel, data_->vocab,
      BatchConfig{tcfg_.mono_len, tcfg_.max_half_len, tcfg_.mask_rate}, sched,
      seed_);
  reweight_.cfg = tcfg_.reweight_config();

  if (resuming) {
    model_ = read_model_checkpoint((out_dir_ / "checkpoint.bin").string());
    TrainState st = read_train_state((out_dir_ / "state.bin").string());
    state_ = st;
    reweight_ = st.reweight;
    std::istringstream(st.data_rng_state) >> data_rng_;
    std::istringstream(st.dropout_rng_state) >> dropout_rng_;
    scheduler_->restore(st.mono_cursors, st.bi_cursors, st.scheduler_counter);
    loss_log_.open(out_dir_ / "loss_log.csv", std::ios::app);
    if (!loss_log_) throw IoError("cannot append to loss_log.csv");
  } else {
    std::mt19937_64 model_rng(seed_);
    model_ = init_model<float>(mcfg_, model_rng);
    loss_log_.open(out_dir_ / "loss_log.csv", std::ios::trunc);
    if (!loss_log_) throw IoError("cannot write loss_log.csv");
    loss_log_ << "step,language,data_type,mean_ce,ema_ce,gamma_l\n";
    write_manifest();
  }
}

Trainer Trainer::resume(const std::string& out_dir) {
  std::filesystem::path dir(out_dir);
  std::ifstream manifest(dir / "run_manifest");
  if (!manifest) throw IoError("no run_manifest in '" + out_dir + "'");
  std::string line, objective, section;
  std::uint64_t seed = 0;
  std::string model_text, train_text;
  while (std::getline(manifest, line)) {
    if (line == "[model]") { section = "model"; continue; }
    if (line == "[train]") { section = "train"; continue; }
    if (section == "model") { model_text += line + "\n"; continue; }
    if (section == "train") { train_text += line + "\n"; continue; }
    if (line.rfind("objective=", 0) == 0) objective = line.substr(10);
    if (line.rfind("seed=", 0) == 0) seed = std::stoull(line.substr(5));
  }
  ModelConfig mcfg = ModelConfig::parse(model_text);
  TrainConfig tcfg = TrainConfig::parse(train_text);
  return Trainer(mcfg, tcfg, loss_mode_from_cli(objective), seed, out_dir,
                 /*resuming=*/true);
}

void Trainer::write_manifest() const {
  std::ofstream out(out_dir_ / "run_manifest", std::ios::trunc);
  if (!out) throw IoError("cannot write run_manifest");
  out << "objective=" << loss_mode_to_cli(mode_) << "\n";
  out << "seed=" << seed_ << "\n";
  out << "[model]\n" << mcfg_.serialize();
  out << "[train]\n" << tcfg_.serialize();
}

void Trainer::save(const std::string& suffix) const {
  write_model_checkpoint((out_dir_ / ("checkpoint" + suffix + ".bin")).string(),
                         model_);
  TrainState st = state_;
  st.reweight = reweight_;
  std::ostringstream data_os, dropout_os;
  data_os << data_rng_;
  dropout_os << dropout_rng_;
  st.data_rng_state = data_os.str();
  st.dropout_rng_state = dropout_os.str();
  st.mono_cursors = scheduler_->mono_cursors();
  st.bi_cursors = scheduler_->bi_cursors();
  st.scheduler_counter = scheduler_->counter();
  write_train_state((out_dir_ / ("state" + suffix + ".bin")).string(), st);
}

void Trainer::log_groups(const LossResult<float>& result) {
  for (const LossGroup& g : result.groups) {
    GroupKey key = g.key;
    auto it = reweight_.groups.find(key);
    double ema = it == reweight_.groups.end() ? g.mean_ce : it->second.ema_ce;
    double gamma_l = it == reweight_.groups.end() ? 0.0 : it->second.gamma_l;
    loss_log_ << state_.step << ',' << key.language << ','
              << to_string(key.data_type) << ',' << g.mean_ce << ',' << ema
              << ',' << gamma_l << '\n';
  }
  loss_log_.flush();
}

TrainOutcome Trainer::run(long long steps) {
  const OptimizerConfig ocfg = tcfg_.optimizer_config();
  long long remaining = tcfg_.total_steps - state_.step;
  if (steps >= 0) remaining = std::min(remaining, steps);
  double last_loss = 0.0;
  for (long long i = 0; i < remaining; ++i) {
    Batch batch = scheduler_->next(data_rng_);
    Tape<float> tape;
    BoundModel<float> bound = bind_model(tape, model_, /*requires_grad=*/true);
    ForwardOptions opts;
    opts.mode = ForwardMode::full;
    opts.training = true;
    opts.dropout_rng = &dropout_rng_;
    LossResult<float> result =
        total_loss(tape, bound, batch, reweight_, mode_, opts);
    if (!result.no_supervised) {
      tape.backward(result.total);
      std::map<std::string, MatF> grads;
      for (const auto& [name, var] : bound.vars) {
        grads.emplace(name, tape.grad(var));
      }
      clip_global_norm(grads, ocfg.clip_norm);
      double lr = lr_schedule(state_.opt.step, ocfg);
      optimizer_step(model_.params, grads, state_.opt, ocfg, lr);
    } else {
      state_.opt.step += 1;  // a step still elapses for the schedule
    }
    state_.step += 1;
    last_loss = result.value;
    update_reweight_state(reweight_, result, state_.step);

    if (!state_.initial_loss_set && result.predicted_positions > 0) {
      state_.initial_loss = result.value;
      state_.initial_loss_set = true;
    }
    if (state_.initial_loss_set &&
        result.value > tcfg_.divergence_factor * state_.initial_loss) {
      state_.divergence_run += 1;
    } else {
      state_.divergence_run = 0;
    }
    if (state_.divergence_run >= tcfg_.divergence_patience) {
      save("_diverged");
      throw DivergenceError(
          "loss exceeded " + std::to_string(tcfg_.divergence_factor) +
          "x the initial loss for " + std::to_string(state_.divergence_run) +
          " consecutive steps at step " + std::to_string(state_.step) +
          "; state dumped to " + out_dir_.string());
    }
    if (state_.step % tcfg_.log_every == 0 || state_.step == tcfg_.total_steps) {
      log_groups(result);
    }
    if (tcfg_.checkpoint_every > 0 && state_.step % tcfg_.checkpoint_every == 0 &&
        state_.step < tcfg_.total_steps) {
      save("_" + std::to_string(state_.step));
    }
  }
  save("");
  TrainOutcome outcome;
  outcome.steps = state_.step;
  outcome.final_loss = last_loss;
  outcome.checkpoint_path = (out_dir_ / "checkpoint.bin").string();
  outcome.state_path = (out_dir_ / "state.bin").string();
  return outcome;
}

}  // namespace dattn
