#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dattn/corpus.hpp"
#include "dattn/model.hpp"

namespace dattn {

/// Linear-probe training knobs. The probe itself is a single linear layer on
/// frozen encoder features, trained full-batch with early stopping on a held
/// out development split.
struct ProbeConfig {
  double lr = 0.5;
  int max_epochs = 300;
  int patience = 10;
  double dev_fraction = 0.25;
};

struct ProbeResult {
  std::string task;  // "pair_classification" or "token_tagging"
  int train_lang = -1;  // the varying (second/evaluated) language
  int eval_lang = -1;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;  // dev accuracy at the early-stop optimum
  double eval_accuracy = 0.0;   // zero-shot accuracy
};

/// Generic linear-classifier helpers, exposed for oracle tests.
/// Rows of `features` are examples; labels in [0, num_classes).
struct LinearClassifier {
  MatD w;  // num_classes x (dim + 1), last column is the bias
  int predict(const MatD& features, int row) const;
};

struct FitResult {
  LinearClassifier clf;       // weights at the best development accuracy
  double dev_accuracy = 0.0;  // best development accuracy reached
  int epochs_run = 0;
};

/// Full-batch softmax regression from zero weights. The last
/// ceil(rows * dev_fraction) feature rows form the development split; the
/// fit stops once the dev accuracy has not improved for `patience` epochs.
FitResult fit_linear_probe(const MatD& features, const std::vector<int>& labels,
                           int num_classes, const ProbeConfig& cfg);

double classifier_accuracy(const LinearClassifier& clf, const MatD& features,
                           const std::vector<int>& labels);

/// Raises a data error when one label exceeds 90% of the examples.
void check_label_balance(const std::vector<int>& labels, int num_classes);

/// Pair classification on frozen features: the [BOS] representation of a
/// concatenated pair, label 1 for true translation pairs and 0 for pairs
/// with a mismatched second sentence (drawn by `seed`). Trains on
/// train_pairs' second language, evaluates zero-shot on eval_pairs'.
ProbeResult probe_pair_classification(const Model<float>& model,
                                      const ParallelCorpus& train_pairs,
                                      const ParallelCorpus& eval_pairs,
                                      const BatchConfig& bcfg,
                                      std::uint64_t seed,
                                      const ProbeConfig& pcfg = {});

/// Token tagging on frozen intra-segment features (last layer, ia_only
/// mode): predict the word class of every content token. Trains on one
/// language's sentences, evaluates zero-shot on another's.
ProbeResult probe_token_tagging(const Model<float>& model,
                                const MonoCorpus& train_corpus,
                                const MonoCorpus& eval_corpus,
                                const BatchConfig& bcfg, std::uint64_t seed,
                                const ProbeConfig& pcfg = {});

/// Feature extraction used by the probes (exposed for tests): the hidden row
/// at [BOS] of a full forward over [BOS] X [SEP] | Y [EOS], one feature row
/// per (src example, tgt example) index pair.
MatD pair_features(const Model<float>& model, const ParallelCorpus& pairs,
                   const std::vector<std::pair<int, int>>& index_pairs,
                   const BatchConfig& bcfg);

}  // namespace dattn
