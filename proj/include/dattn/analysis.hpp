#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dattn/batch.hpp"
#include "dattn/config.hpp"
#include "dattn/corpus.hpp"
#include "dattn/model.hpp"

namespace dattn {

/// Argmax-hit score of cross-segment attention against gold token pairs.
/// Each gold pair (p, q) is scored in both directions: row p must peak at
/// column q among the opposite segment's content columns, and vice versa.
struct AlignmentScore {
  double accuracy = 0.0;  // hits / rows_evaluated, exact ratio
  double accuracy_src_to_tgt = 0.0;
  double accuracy_tgt_to_src = 0.0;
  int rows_evaluated = 0;
  int hits = 0;
  int ties = 0;  // rows whose maximum was shared by several columns
};

/// Scores the head-averaged probabilities of one attention record. Accepts
/// CA records (already cross-segment by construction) and MA records (the
/// argmax is taken over cross-segment content columns only, which matches
/// renormalizing over them). Gold pairs use row coordinates; a pair whose
/// endpoints are not content positions in opposite segments is a data error.
AlignmentScore alignment_accuracy(const AttentionRecord& record,
                                  const std::vector<std::pair<int, int>>& gold);

struct MassRow {
  int row = -1;
  double intra = 0.0;
  double cross = 0.0;  // intra + cross == 1 after renormalization
};

struct MassBalance {
  int layer = -1;
  std::vector<MassRow> rows;  // one per content query position
  double mean_intra = 0.0;
  double mean_cross = 0.0;
};

/// Splits each content query row's probability mass at the segment boundary,
/// over content columns only, renormalized per row. Only meaningful for MA
/// records over bilingual inputs; anything else is a data error.
MassBalance mass_balance(const AttentionRecord& record);

struct HeatmapFiles {
  std::string csv_path;
  std::string pgm_path;
  std::string gold_path;
};

/// Writes the head-averaged probabilities of one record as
///   <prefix>.csv   labeled probability grid (segment-prefixed token labels)
///   <prefix>.pgm   P2 grayscale image, pixel = round(255*min(p,0.15)/0.15)
///   <prefix>.gold  one "p-q" gold pair per line (row coordinates)
/// An empty record raises a data error before any file is created.
HeatmapFiles export_heatmap(const AttentionRecord& record,
                            const std::vector<int>& tokens,
                            const Vocabulary& vocab,
                            const std::vector<std::pair<int, int>>& gold,
                            const std::string& out_prefix);

struct HeatmapCsv {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  MatD probs;
};

HeatmapCsv read_heatmap_csv(const std::string& path);

/// Attention records of one sequence, bundled with what analysis needs.
struct SequenceRecords {
  std::vector<AttentionRecord> records;
  std::vector<int> tokens;
  SegmentLayout layout;
  std::vector<std::pair<int, int>> gold;
};

/// Runs a no-grad full forward per batch row and collects every attention
/// record the encoder produced for that row.
std::vector<SequenceRecords> collect_records(const Model<float>& model,
                                             const Batch& batch);

/// The record of the given tag in the highest layer that has one.
const AttentionRecord& last_record_of(const SequenceRecords& seq, AttnTag tag);

/// Side-by-side parameter-count table for several configurations.
std::string param_report_table(const std::vector<std::string>& names,
                               const std::vector<ModelConfig>& cfgs);

/// Totals and the size relations the four variants must satisfy.
struct ParamRelations {
  long long ma = 0, da = 0, da_reduce = 0, da_share = 0;
  bool share_equals_ma = false;
  bool da_exceeds_ma = false;
  bool reduce_below_da = false;
  bool all_hold() const {
    return share_equals_ma && da_exceeds_ma && reduce_below_da;
  }
};

ParamRelations param_relations(const ModelConfig& ma, const ModelConfig& da,
                               const ModelConfig& da_reduce,
                               const ModelConfig& da_share);

}  // namespace dattn
