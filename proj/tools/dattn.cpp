// Command-line front end: train desk-scale encoders, generate toy corpora,
// and run the analysis/probe suite on saved checkpoints.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dattn/analysis.hpp"
#include "dattn/probes.hpp"
#include "dattn/trainer.hpp"

namespace fs = std::filesystem;
using namespace dattn;

namespace {

VariantKind variant_from_cli(const std::string& s) {
  if (s == "ma") return VariantKind::MA;
  if (s == "da") return VariantKind::DA;
  if (s == "da-reduce") return VariantKind::DA_REDUCE;
  if (s == "da-share") return VariantKind::DA_SHARE;
  throw ConfigError("unknown model '" + s +
                    "' (expected ma, da, da-reduce, or da-share)");
}

ParallelCorpus parallel_from_file(const std::string& path) {
  CorpusFile file = read_corpus_file(path);
  if (!file.parallel) {
    throw DataError("'" + path + "' is a monolingual corpus; this command "
                    "needs a parallel one");
  }
  ParallelCorpus corpus;
  corpus.lang_src = file.lang_a;
  corpus.lang_tgt = file.lang_b;
  corpus.examples = file.pairs;
  return corpus;
}

Vocabulary vocab_for(const ModelConfig& cfg) {
  Vocabulary vocab;
  vocab.num_languages = cfg.num_languages;
  vocab.lexicon_size =
      (cfg.vocab_size - Vocabulary::kNumSpecials) / cfg.num_languages;
  return vocab;
}

BatchConfig eval_batch_config(const ModelConfig& cfg) {
  BatchConfig bcfg;
  bcfg.mask_rate = 0.0;
  bcfg.max_half_len = std::min(10, cfg.max_positions / 2);
  return bcfg;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

int cmd_train(const std::string& model_s, const std::string& objective,
              const std::string& config_path, std::uint64_t seed,
              const std::string& out_dir) {
  TrainConfig tcfg = config_path.empty() ? TrainConfig{}
                                         : TrainConfig::parse_file(config_path);
  ModelConfig mcfg = desk_config(variant_from_cli(model_s));
  mcfg.vocab_size = Vocabulary::kNumSpecials + 3 * tcfg.lexicon_size;
  mcfg.max_positions = std::max({mcfg.max_positions, tcfg.mono_len,
                                 2 * tcfg.max_half_len});
  mcfg.validate();
  Trainer trainer(mcfg, tcfg, loss_mode_from_cli(objective), seed, out_dir);
  TrainOutcome outcome = trainer.run();
  std::printf("trained %lld steps, final loss %.4f\n", outcome.steps,
              outcome.final_loss);
  std::printf("checkpoint: %s\n", outcome.checkpoint_path.c_str());
  return 0;
}

int cmd_gen_corpus(const std::string& out_dir, int lexicon, int sentences,
                   int pairs, int eval_pairs, std::uint64_t seed) {
  fs::create_directories(out_dir);
  TrainConfig tcfg;
  tcfg.lexicon_size = lexicon;
  tcfg.mono_sentences = sentences;
  tcfg.parallel_pairs = pairs;
  tcfg.corpus_seed = seed;
  DeskData data = build_desk_data(tcfg);
  const fs::path base(out_dir);
  for (int lang = 0; lang < 3; ++lang) {
    write_mono_corpus((base / ("mono_l" + std::to_string(lang) + ".txt"))
                          .string(),
                      data.mono[static_cast<std::size_t>(lang)]);
  }
  write_parallel_corpus((base / "parallel_l0_l1.txt").string(),
                        data.parallel[0]);
  write_parallel_corpus((base / "parallel_l0_l2.txt").string(),
                        data.parallel[1]);
  int files = 5;
  if (eval_pairs > 0) {
    write_parallel_corpus(
        (base / "eval_l0_l1.txt").string(),
        build_eval_parallel(tcfg, data.spec_a, data.spec_b, data.vocab,
                            eval_pairs, 3001));
    write_parallel_corpus(
        (base / "eval_l0_l2.txt").string(),
        build_eval_parallel(tcfg, data.spec_a, data.spec_c, data.vocab,
                            eval_pairs, 3002));
    files += 2;
  }
  std::printf("wrote %d corpus files to %s\n", files, out_dir.c_str());
  return 0;
}

// Pools alignment accuracy over a parallel corpus for the last record of one
// tag. Returns {accuracy, src_to_tgt, tgt_to_src, rows, hits, ties}.
struct PooledAlignment {
  double accuracy = 0.0, src_to_tgt = 0.0, tgt_to_src = 0.0;
  long long rows = 0, hits = 0, ties = 0;
};

PooledAlignment pooled_alignment(const Model<float>& model,
                                 const ParallelCorpus& corpus,
                                 const Vocabulary& vocab,
                                 const BatchConfig& bcfg, AttnTag tag) {
  PooledAlignment out;
  double src_hits = 0.0, tgt_hits = 0.0;
  long long pairs = 0;
  std::size_t cursor = 0;
  std::mt19937_64 rng(4242);
  const int batch_rows = 16;
  const int n_batches =
      (static_cast<int>(corpus.examples.size()) + batch_rows - 1) / batch_rows;
  for (int b = 0; b < n_batches; ++b) {
    Batch batch = make_bilingual_batch(corpus, cursor, batch_rows, vocab, bcfg,
                                       rng);
    for (const SequenceRecords& seq : collect_records(model, batch)) {
      if (seq.gold.empty()) continue;
      AlignmentScore s = alignment_accuracy(last_record_of(seq, tag), seq.gold);
      const auto n = static_cast<long long>(seq.gold.size());
      out.rows += s.rows_evaluated;
      out.hits += s.hits;
      out.ties += s.ties;
      src_hits += s.accuracy_src_to_tgt * static_cast<double>(n);
      tgt_hits += s.accuracy_tgt_to_src * static_cast<double>(n);
      pairs += n;
    }
  }
  if (out.rows) {
    out.accuracy = static_cast<double>(out.hits) / static_cast<double>(out.rows);
    out.src_to_tgt = src_hits / static_cast<double>(pairs);
    out.tgt_to_src = tgt_hits / static_cast<double>(pairs);
  }
  return out;
}

int cmd_analyze_align(const std::string& checkpoint, const std::string& corpus,
                      const std::string& out_dir) {
  Model<float> model = read_model_checkpoint(checkpoint);
  ParallelCorpus pairs = parallel_from_file(corpus);
  Vocabulary vocab = vocab_for(model.cfg);
  BatchConfig bcfg = eval_batch_config(model.cfg);
  const AttnTag tag = model.cfg.variant.kind == VariantKind::MA ? AttnTag::MA
                                                                : AttnTag::CA;
  PooledAlignment p = pooled_alignment(model, pairs, vocab, bcfg, tag);
  fs::create_directories(out_dir);
  std::ofstream out = open_out(fs::path(out_dir) / "alignment.csv");
  out << "tag,accuracy,src_to_tgt,tgt_to_src,rows,hits,ties\n";
  out << (tag == AttnTag::MA ? "ma" : "ca") << ',' << p.accuracy << ','
      << p.src_to_tgt << ',' << p.tgt_to_src << ',' << p.rows << ',' << p.hits
      << ',' << p.ties << '\n';
  std::printf("alignment accuracy %.4f over %lld rows (%s)\n", p.accuracy,
              p.rows, tag == AttnTag::MA ? "ma" : "ca");
  return 0;
}

int cmd_analyze_mass(const std::string& checkpoint, const std::string& corpus,
                     const std::string& out_dir) {
  Model<float> model = read_model_checkpoint(checkpoint);
  if (model.cfg.variant.kind != VariantKind::MA) {
    throw DataError("mass balance applies to mixed-attention checkpoints; "
                    "this one is decomposed");
  }
  ParallelCorpus pairs = parallel_from_file(corpus);
  Vocabulary vocab = vocab_for(model.cfg);
  BatchConfig bcfg = eval_batch_config(model.cfg);
  std::map<int, std::pair<double, long long>> per_layer;  // intra sum, rows
  std::size_t cursor = 0;
  std::mt19937_64 rng(4242);
  const int n_batches =
      (static_cast<int>(pairs.examples.size()) + 15) / 16;
  for (int b = 0; b < n_batches; ++b) {
    Batch batch = make_bilingual_batch(pairs, cursor, 16, vocab, bcfg, rng);
    for (const SequenceRecords& seq : collect_records(model, batch)) {
      for (const AttentionRecord& rec : seq.records) {
        if (rec.tag != AttnTag::MA || rec.layout.mono()) continue;
        MassBalance mb = mass_balance(rec);
        auto& [sum, rows] = per_layer[rec.layer];
        for (const MassRow& row : mb.rows) {
          sum += row.intra;
          ++rows;
        }
      }
    }
  }
  fs::create_directories(out_dir);
  std::ofstream out = open_out(fs::path(out_dir) / "mass.csv");
  out << "layer,mean_intra,mean_cross,rows\n";
  for (const auto& [layer, acc] : per_layer) {
    const double intra = acc.first / static_cast<double>(acc.second);
    out << layer << ',' << intra << ',' << 1.0 - intra << ',' << acc.second
        << '\n';
    std::printf("layer %d: intra %.4f cross %.4f (%lld rows)\n", layer, intra,
                1.0 - intra, acc.second);
  }
  return 0;
}

int cmd_analyze_heatmap(const std::string& checkpoint,
                        const std::string& corpus, const std::string& out_dir,
                        int rows) {
  Model<float> model = read_model_checkpoint(checkpoint);
  ParallelCorpus pairs = parallel_from_file(corpus);
  Vocabulary vocab = vocab_for(model.cfg);
  BatchConfig bcfg = eval_batch_config(model.cfg);
  fs::create_directories(out_dir);
  std::size_t cursor = 0;
  std::mt19937_64 rng(4242);
  Batch batch = make_bilingual_batch(pairs, cursor, rows, vocab, bcfg, rng);
  const AttnTag tag = model.cfg.variant.kind == VariantKind::MA ? AttnTag::MA
                                                                : AttnTag::CA;
  std::vector<SequenceRecords> seqs = collect_records(model, batch);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const fs::path prefix = fs::path(out_dir) / ("row" + std::to_string(r));
    HeatmapFiles files =
        export_heatmap(last_record_of(seqs[r], tag), seqs[r].tokens, vocab,
                       seqs[r].gold, prefix.string());
    std::printf("wrote %s / .pgm / .gold\n", files.csv_path.c_str());
  }
  return 0;
}

int cmd_analyze_params(const std::string& checkpoint,
                       const std::string& out_dir) {
  const std::vector<std::string> names = {"ma", "da", "da-reduce", "da-share"};
  const std::vector<ModelConfig> desk = {
      desk_config(VariantKind::MA), desk_config(VariantKind::DA),
      desk_config(VariantKind::DA_REDUCE), desk_config(VariantKind::DA_SHARE)};
  const std::vector<ModelConfig> base = {
      full_scale_config(VariantKind::MA), full_scale_config(VariantKind::DA),
      full_scale_config(VariantKind::DA_REDUCE),
      full_scale_config(VariantKind::DA_SHARE)};
  std::string report = "desk configuration\n" + param_report_table(names, desk) +
                       "\nbase configuration\n" + param_report_table(names, base);
  if (!checkpoint.empty()) {
    Model<float> model = read_model_checkpoint(checkpoint);
    long long total = 0;
    for (const auto& [name, p] : model.params) total += p.size();
    report += "\ncheckpoint " + checkpoint + ": " + std::to_string(total) +
              " parameters\n";
  }
  fs::create_directories(out_dir);
  std::ofstream out = open_out(fs::path(out_dir) / "params.txt");
  out << report;
  std::fputs(report.c_str(), stdout);
  return 0;
}

int cmd_analyze_probe(const std::string& checkpoint, const std::string& corpus,
                      const std::string& eval_corpus,
                      const std::string& out_dir, int seeds) {
  Model<float> model = read_model_checkpoint(checkpoint);
  ParallelCorpus train_pairs = parallel_from_file(corpus);
  ParallelCorpus eval_pairs = parallel_from_file(eval_corpus);
  BatchConfig bcfg = eval_batch_config(model.cfg);
  fs::create_directories(out_dir);
  std::ofstream out = open_out(fs::path(out_dir) / "probe.csv");
  out << "task,train_lang,eval_lang,seed,accuracy\n";
  double sum = 0.0;
  for (int seed = 0; seed < seeds; ++seed) {
    ProbeResult r = probe_pair_classification(
        model, train_pairs, eval_pairs, bcfg,
        static_cast<std::uint64_t>(seed));
    out << r.task << ',' << r.train_lang << ',' << r.eval_lang << ','
        << r.seed << ',' << r.eval_accuracy << '\n';
    sum += r.eval_accuracy;
  }
  std::printf("mean zero-shot accuracy %.4f over %d seeds\n", sum / seeds,
              seeds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for decomposed cross-lingual attention"};
  app.require_subcommand(1);

  // train
  std::string model_s = "da", objective = "adapt-fl", config_path, out_dir;
  std::uint64_t seed = 0;
  CLI::App* train = app.add_subcommand("train", "train one encoder");
  train->add_option("--model", model_s, "ma|da|da-reduce|da-share");
  train->add_option("--objective", objective, "ce|fl|adapt-fl");
  train->add_option("--config", config_path, "key=value training config file");
  train->add_option("--seed", seed, "run seed");
  train->add_option("--out", out_dir, "output directory")->required();

  // gen-corpus
  int lexicon = 96, sentences = 3000, pairs = 3000, eval_pairs = 0;
  std::uint64_t corpus_seed = 90210;
  std::string corpus_out;
  CLI::App* gen = app.add_subcommand("gen-corpus",
                                     "write the three-language toy corpora");
  gen->add_option("--lexicon", lexicon, "words per language");
  gen->add_option("--sentences", sentences, "monolingual sentences per language");
  gen->add_option("--pairs", pairs, "parallel pairs per language pair");
  gen->add_option("--eval-pairs", eval_pairs,
                  "also write held-out parallel files with this many pairs");
  gen->add_option("--seed", corpus_seed, "corpus seed");
  gen->add_option("--out", corpus_out, "output directory")->required();

  // analyze
  std::string checkpoint, corpus, eval_corpus, analyze_out;
  int heatmap_rows = 4, probe_seeds = 8;
  CLI::App* analyze = app.add_subcommand("analyze",
                                         "inspect a trained checkpoint");
  analyze->require_subcommand(1);
  auto add_common = [&](CLI::App* sub, bool needs_checkpoint,
                        bool needs_corpus) {
    auto* c = sub->add_option("--checkpoint", checkpoint, "model checkpoint");
    auto* d = sub->add_option("--corpus", corpus, "parallel corpus file");
    sub->add_option("--out", analyze_out, "output directory")->required();
    if (needs_checkpoint) c->required();
    if (needs_corpus) d->required();
  };
  CLI::App* heatmap = analyze->add_subcommand(
      "heatmap", "per-row attention grids as CSV/PGM with gold sidecars");
  add_common(heatmap, true, true);
  heatmap->add_option("--rows", heatmap_rows, "rows to export");
  CLI::App* align = analyze->add_subcommand(
      "align", "argmax alignment accuracy against gold pairs");
  add_common(align, true, true);
  CLI::App* mass = analyze->add_subcommand(
      "mass", "intra/cross attention-mass split per layer");
  add_common(mass, true, true);
  CLI::App* params = analyze->add_subcommand(
      "params", "parameter-count tables for all encoder variants");
  add_common(params, false, false);
  CLI::App* probe = analyze->add_subcommand(
      "probe", "zero-shot pair-classification probe over several seeds");
  add_common(probe, true, true);
  probe->add_option("--eval-corpus", eval_corpus,
                    "held-out parallel corpus for zero-shot evaluation")
      ->required();
  probe->add_option("--seeds", probe_seeds, "number of probe seeds");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return cmd_train(model_s, objective, config_path, seed, out_dir);
    }
    if (gen->parsed()) {
      return cmd_gen_corpus(corpus_out, lexicon, sentences, pairs, eval_pairs,
                            corpus_seed);
    }
    if (heatmap->parsed()) {
      return cmd_analyze_heatmap(checkpoint, corpus, analyze_out, heatmap_rows);
    }
    if (align->parsed()) {
      return cmd_analyze_align(checkpoint, corpus, analyze_out);
    }
    if (mass->parsed()) {
      return cmd_analyze_mass(checkpoint, corpus, analyze_out);
    }
    if (params->parsed()) {
      return cmd_analyze_params(checkpoint, analyze_out);
    }
    if (probe->parsed()) {
      return cmd_analyze_probe(checkpoint, corpus, eval_corpus, analyze_out,
                               probe_seeds);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
