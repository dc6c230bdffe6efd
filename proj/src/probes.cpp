#include "dattn/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dattn/optimizer.hpp"

namespace dattn {

int LinearClassifier::predict(const MatD& features, int row) const {
  const Eigen::Index dim = w.cols() - 1;
  if (features.cols() != dim) {
    throw ShapeError("classifier expects " + std::to_string(dim) +
                     "-dimensional features, got " +
                     std::to_string(features.cols()));
  }
  int best = 0;
  double best_z = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < w.rows(); ++c) {
    const double z =
        w.row(c).head(dim).dot(features.row(row)) + w(c, dim);
    if (z > best_z) {
      best_z = z;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double classifier_accuracy(const LinearClassifier& clf, const MatD& features,
                           const std::vector<int>& labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ShapeError("feature rows and labels disagree");
  }
  if (features.rows() == 0) throw DataError("no examples to score");
  int hits = 0;
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    if (clf.predict(features, static_cast<int>(r)) ==
        labels[static_cast<std::size_t>(r)]) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(features.rows());
}

void check_label_balance(const std::vector<int>& labels, int num_classes) {
  if (labels.empty()) throw DataError("no labels generated");
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw DataError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  const int top = *std::max_element(counts.begin(), counts.end());
  if (static_cast<double>(top) > 0.9 * static_cast<double>(labels.size())) {
    throw DataError("generated labels are imbalanced beyond 90/10: " +
                    std::to_string(top) + " of " +
                    std::to_string(labels.size()) +
                    " examples share one label");
  }
}

FitResult fit_linear_probe(const MatD& features, const std::vector<int>& labels,
                           int num_classes, const ProbeConfig& cfg) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ShapeError("feature rows and labels disagree");
  }
  if (num_classes < 2) throw ConfigError("probe needs at least two classes");
  if (cfg.dev_fraction <= 0.0 || cfg.dev_fraction >= 1.0) {
    throw ConfigError("dev_fraction must lie in (0, 1)");
  }
  const Eigen::Index rows = features.rows();
  const Eigen::Index n_dev = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(
             std::ceil(static_cast<double>(rows) * cfg.dev_fraction)));
  if (n_dev >= rows) throw DataError("too few examples for a dev split");
  const Eigen::Index n_train = rows - n_dev;
  const Eigen::Index dim = features.cols();

  const MatD train_x = features.topRows(n_train);
  const MatD dev_x = features.bottomRows(n_dev);
  const std::vector<int> train_y(labels.begin(), labels.begin() + n_train);
  const std::vector<int> dev_y(labels.begin() + n_train, labels.end());

  MatD w = MatD::Zero(num_classes, dim + 1);
  FitResult best;
  best.clf.w = w;
  std::vector<double> history;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    // Forward: z = x w_lin^T + b, softmax per row.
    MatD z = train_x * w.leftCols(dim).transpose();
    z.rowwise() += w.col(dim).transpose();
    MatD p(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double m = z.row(r).maxCoeff();
      p.row(r) = (z.row(r).array() - m).exp();
      p.row(r) /= p.row(r).sum();
    }
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      p(r, train_y[static_cast<std::size_t>(r)]) -= 1.0;
    }
    p /= static_cast<double>(n_train);
    w.leftCols(dim) -= cfg.lr * (p.transpose() * train_x);
    w.col(dim) -= cfg.lr * p.colwise().sum().transpose();

    LinearClassifier clf{w};
    const double acc = classifier_accuracy(clf, dev_x, dev_y);
    history.push_back(acc);
    if (history.size() == 1 || acc > best.dev_accuracy) {
      best.clf.w = w;
      best.dev_accuracy = acc;
    }
    best.epochs_run = epoch + 1;
    if (early_stop(history, cfg.patience)) break;
  }
  return best;
}

namespace {

// [BOS] x [SEP] PAD* | y [EOS] PAD*, sized per pair (no batch-common width).
struct BuiltRow {
  std::vector<int> tokens;
  SegmentLayout layout;
};

BuiltRow build_pair_row(const std::vector<int>& src, const std::vector<int>& tgt,
                        int lang_src, int lang_tgt, const BatchConfig& bcfg) {
  const int x_len =
      std::min<int>(static_cast<int>(src.size()), bcfg.max_half_len - 2);
  const int y_len =
      std::min<int>(static_cast<int>(tgt.size()), bcfg.max_half_len - 1);
  const int half = std::max(2 + x_len, y_len + 1);
  BuiltRow row;
  row.tokens.assign(static_cast<std::size_t>(2 * half), Vocabulary::kPad);
  row.tokens[0] = Vocabulary::kBos;
  for (int i = 0; i < x_len; ++i) {
    row.tokens[static_cast<std::size_t>(1 + i)] = src[static_cast<std::size_t>(i)];
  }
  row.tokens[static_cast<std::size_t>(1 + x_len)] = Vocabulary::kSep;
  for (int j = 0; j < y_len; ++j) {
    row.tokens[static_cast<std::size_t>(half + j)] =
        tgt[static_cast<std::size_t>(j)];
  }
  row.tokens[static_cast<std::size_t>(half + y_len)] = Vocabulary::kEos;

  SegmentLayout& lay = row.layout;
  lay.n = 2 * half;
  lay.boundary = half;
  lay.lang_x = lang_src;
  lay.lang_y = lang_tgt;
  lay.bos_pos = 0;
  lay.sep_pos = 1 + x_len;
  lay.eos_pos = half + y_len;
  lay.real.assign(static_cast<std::size_t>(lay.n), false);
  for (int i = 0; i <= lay.sep_pos; ++i) lay.real[static_cast<std::size_t>(i)] = true;
  for (int i = half; i <= lay.eos_pos; ++i) lay.real[static_cast<std::size_t>(i)] = true;
  lay.validate();
  return row;
}

BuiltRow build_mono_row(const std::vector<int>& words, int language,
                        const BatchConfig& bcfg) {
  const int len =
      std::min<int>(static_cast<int>(words.size()), bcfg.mono_len - 2);
  BuiltRow row;
  row.tokens.reserve(static_cast<std::size_t>(len + 2));
  row.tokens.push_back(Vocabulary::kBos);
  for (int i = 0; i < len; ++i) {
    row.tokens.push_back(words[static_cast<std::size_t>(i)]);
  }
  row.tokens.push_back(Vocabulary::kEos);
  SegmentLayout& lay = row.layout;
  lay.n = len + 2;
  lay.boundary = lay.n;
  lay.lang_x = language;
  lay.lang_y = language;
  lay.bos_pos = 0;
  lay.sep_pos = -1;
  lay.eos_pos = lay.n - 1;
  lay.real.assign(static_cast<std::size_t>(lay.n), true);
  lay.validate();
  return row;
}

MatD hidden_states(const Model<float>& model, const BuiltRow& row,
                   ForwardMode mode) {
  Tape<float> tape;
  BoundModel<float> bound = bind_model(tape, model, /*requires_grad=*/false);
  ForwardOptions opts;
  opts.mode = mode;
  opts.training = false;
  Var<float> h = encoder_forward(tape, bound, row.tokens, row.layout, opts);
  return tape.value(h).cast<double>();
}

}  // namespace

MatD pair_features(const Model<float>& model, const ParallelCorpus& pairs,
                   const std::vector<std::pair<int, int>>& index_pairs,
                   const BatchConfig& bcfg) {
  if (index_pairs.empty()) throw DataError("no pair examples requested");
  const int n = static_cast<int>(pairs.examples.size());
  MatD feats(static_cast<Eigen::Index>(index_pairs.size()), model.cfg.d_model);
  for (std::size_t i = 0; i < index_pairs.size(); ++i) {
    const auto [a, b] = index_pairs[i];
    if (a < 0 || a >= n || b < 0 || b >= n) {
      throw IndexError("pair (" + std::to_string(a) + ", " + std::to_string(b) +
                       ") outside a corpus of " + std::to_string(n));
    }
    const auto& src = pairs.examples[static_cast<std::size_t>(a)];
    const auto& tgt = pairs.examples[static_cast<std::size_t>(b)];
    BuiltRow row = build_pair_row(src.src, tgt.tgt, pairs.lang_src,
                                  pairs.lang_tgt, bcfg);
    MatD h = hidden_states(model, row, ForwardMode::full);
    feats.row(static_cast<Eigen::Index>(i)) = h.row(row.layout.bos_pos);
  }
  return feats;
}

namespace {

// Features and labels for one parallel corpus: per example one true pair
// (label 1) and one mismatched pair (label 0), interleaved so any contiguous
// development split stays balanced.
void pair_probe_dataset(const Model<float>& model, const ParallelCorpus& pairs,
                        const BatchConfig& bcfg, std::mt19937_64& rng,
                        MatD& features, std::vector<int>& labels) {
  const std::size_t n = pairs.examples.size();
  if (n < 2) throw DataError("pair probe needs at least two examples");
  std::vector<std::pair<int, int>> index_pairs;
  labels.clear();
  index_pairs.reserve(2 * n);
  labels.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    index_pairs.emplace_back(static_cast<int>(i), static_cast<int>(i));
    labels.push_back(1);
    std::size_t j = rng() % (n - 1);
    if (j >= i) ++j;  // uniform over the n-1 mismatches
    index_pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
    labels.push_back(0);
  }
  features = pair_features(model, pairs, index_pairs, bcfg);
}

}  // namespace

ProbeResult probe_pair_classification(const Model<float>& model,
                                      const ParallelCorpus& train_pairs,
                                      const ParallelCorpus& eval_pairs,
                                      const BatchConfig& bcfg,
                                      std::uint64_t seed,
                                      const ProbeConfig& pcfg) {
  std::mt19937_64 rng(seed);
  MatD train_x, eval_x;
  std::vector<int> train_y, eval_y;
  pair_probe_dataset(model, train_pairs, bcfg, rng, train_x, train_y);
  pair_probe_dataset(model, eval_pairs, bcfg, rng, eval_x, eval_y);
  check_label_balance(train_y, 2);
  check_label_balance(eval_y, 2);
  FitResult fit = fit_linear_probe(train_x, train_y, 2, pcfg);
  ProbeResult result;
  result.task = "pair_classification";
  result.train_lang = train_pairs.lang_tgt;
  result.eval_lang = eval_pairs.lang_tgt;
  result.seed = seed;
  result.train_accuracy = fit.dev_accuracy;
  result.eval_accuracy = classifier_accuracy(fit.clf, eval_x, eval_y);
  return result;
}

namespace {

void tagging_dataset(const Model<float>& model, const MonoCorpus& corpus,
                     const BatchConfig& bcfg, std::mt19937_64& rng,
                     MatD& features, std::vector<int>& labels) {
  const std::size_t n = corpus.sentences.size();
  if (n == 0) throw DataError("tagging probe got an empty corpus");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates, seed-controlled
    std::swap(order[i - 1], order[rng() % i]);
  }
  std::vector<MatD> rows;
  labels.clear();
  for (std::size_t idx : order) {
    BuiltRow row = build_mono_row(corpus.sentences[idx], corpus.language, bcfg);
    MatD h = hidden_states(model, row, ForwardMode::ia_only);
    const int content = row.layout.n - 2;  // tokens between [BOS] and [EOS]
    for (int i = 0; i < content; ++i) {
      rows.push_back(h.row(1 + i));
      labels.push_back(
          static_cast<int>(corpus.classes[idx][static_cast<std::size_t>(i)]));
    }
  }
  features.resize(static_cast<Eigen::Index>(rows.size()), model.cfg.d_model);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    features.row(static_cast<Eigen::Index>(r)) = rows[r];
  }
}

}  // namespace

ProbeResult probe_token_tagging(const Model<float>& model,
                                const MonoCorpus& train_corpus,
                                const MonoCorpus& eval_corpus,
                                const BatchConfig& bcfg, std::uint64_t seed,
                                const ProbeConfig& pcfg) {
  std::mt19937_64 rng(seed);
  MatD train_x, eval_x;
  std::vector<int> train_y, eval_y;
  tagging_dataset(model, train_corpus, bcfg, rng, train_x, train_y);
  tagging_dataset(model, eval_corpus, bcfg, rng, eval_x, eval_y);
  check_label_balance(train_y, kNumWordClasses);
  check_label_balance(eval_y, kNumWordClasses);
  FitResult fit = fit_linear_probe(train_x, train_y, kNumWordClasses, pcfg);
  ProbeResult result;
  result.task = "token_tagging";
  result.train_lang = train_corpus.language;
  result.eval_lang = eval_corpus.language;
  result.seed = seed;
  result.train_accuracy = fit.dev_accuracy;
  result.eval_accuracy = classifier_accuracy(fit.clf, eval_x, eval_y);
  return result;
}

}  // namespace dattn
