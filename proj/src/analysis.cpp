#include "dattn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dattn {

namespace {

// Candidate key columns for a query at `pos`: content positions in the
// opposite segment.
std::vector<int> opposite_content_columns(const SegmentLayout& lay, int pos) {
  std::vector<int> cols;
  const int seg = lay.segment_of(pos);
  for (int c = 0; c < lay.n; ++c) {
    if (lay.segment_of(c) != seg && lay.is_content(c)) cols.push_back(c);
  }
  return cols;
}

// Argmax over `cols` of probs.row(row); lowest column wins ties. Returns
// {argmax_column, tied} — restricting to a candidate set leaves the argmax
// unchanged under renormalization, so no explicit renormalization is needed.
std::pair<int, bool> restricted_argmax(const MatD& probs, int row,
                                       const std::vector<int>& cols) {
  int best = cols.front();
  double best_p = probs(row, best);
  bool tied = false;
  for (std::size_t i = 1; i < cols.size(); ++i) {
    const double p = probs(row, cols[i]);
    if (p > best_p) {
      best = cols[i];
      best_p = p;
      tied = false;
    } else if (p == best_p) {
      tied = true;
    }
  }
  return {best, tied};
}

}  // namespace

AlignmentScore alignment_accuracy(
    const AttentionRecord& record,
    const std::vector<std::pair<int, int>>& gold) {
  if (record.tag == AttnTag::IA) {
    throw DataError(
        "alignment accuracy needs cross-segment probabilities; got an "
        "intra-segment record");
  }
  const SegmentLayout& lay = record.layout;
  lay.validate();
  if (lay.mono()) {
    throw DataError("alignment accuracy needs a bilingual layout");
  }
  if (gold.empty()) throw DataError("alignment accuracy: no gold pairs");
  const MatD probs = record.head_average();
  if (probs.rows() != lay.n || probs.cols() != lay.n) {
    throw ShapeError("attention record is " + std::to_string(probs.rows()) +
                     "x" + std::to_string(probs.cols()) + " but layout has " +
                     std::to_string(lay.n) + " positions");
  }

  AlignmentScore score;
  int hits_st = 0, hits_ts = 0, rows_st = 0, rows_ts = 0;
  for (const auto& [p, q] : gold) {
    if (p < 0 || p >= lay.n || q < 0 || q >= lay.n) {
      throw DataError("gold pair (" + std::to_string(p) + ", " +
                      std::to_string(q) + ") outside a row of length " +
                      std::to_string(lay.n));
    }
    if (lay.segment_of(p) != 0 || lay.segment_of(q) != 1 ||
        !lay.is_content(p) || !lay.is_content(q)) {
      throw DataError("gold pair (" + std::to_string(p) + ", " +
                      std::to_string(q) +
                      ") does not join content positions across the segment "
                      "boundary");
    }
    {
      auto cols = opposite_content_columns(lay, p);
      auto [arg, tied] = restricted_argmax(probs, p, cols);
      ++rows_st;
      if (arg == q) ++hits_st;
      if (tied) ++score.ties;
    }
    {
      auto cols = opposite_content_columns(lay, q);
      auto [arg, tied] = restricted_argmax(probs, q, cols);
      ++rows_ts;
      if (arg == p) ++hits_ts;
      if (tied) ++score.ties;
    }
  }
  score.rows_evaluated = rows_st + rows_ts;
  score.hits = hits_st + hits_ts;
  score.accuracy =
      static_cast<double>(score.hits) / static_cast<double>(score.rows_evaluated);
  score.accuracy_src_to_tgt =
      static_cast<double>(hits_st) / static_cast<double>(rows_st);
  score.accuracy_tgt_to_src =
      static_cast<double>(hits_ts) / static_cast<double>(rows_ts);
  return score;
}

MassBalance mass_balance(const AttentionRecord& record) {
  if (record.tag != AttnTag::MA) {
    throw DataError("mass balance applies to mixed-attention records only; "
                    "got " + to_string(record.tag));
  }
  const SegmentLayout& lay = record.layout;
  lay.validate();
  if (lay.mono()) {
    throw DataError("mass balance needs a bilingual layout");
  }
  const MatD probs = record.head_average();
  MassBalance mb;
  mb.layer = record.layer;
  double sum_intra = 0.0, sum_cross = 0.0;
  for (int r = 0; r < lay.n; ++r) {
    if (!lay.is_content(r)) continue;
    const int seg = lay.segment_of(r);
    double intra = 0.0, cross = 0.0;
    for (int c = 0; c < lay.n; ++c) {
      if (!lay.is_content(c)) continue;
      (lay.segment_of(c) == seg ? intra : cross) += probs(r, c);
    }
    const double total = intra + cross;
    if (total <= 0.0) {
      throw DataError("content query row " + std::to_string(r) +
                      " carries no mass on content columns");
    }
    mb.rows.push_back({r, intra / total, cross / total});
    sum_intra += intra / total;
    sum_cross += cross / total;
  }
  if (mb.rows.empty()) throw DataError("layout has no content query rows");
  mb.mean_intra = sum_intra / static_cast<double>(mb.rows.size());
  mb.mean_cross = sum_cross / static_cast<double>(mb.rows.size());
  return mb;
}

namespace {

std::string position_label(const SegmentLayout& lay, const Vocabulary& vocab,
                           const std::vector<int>& tokens, int pos) {
  const char* seg = lay.segment_of(pos) == 0 ? "x:" : "y:";
  return seg + vocab.token_string(tokens[static_cast<std::size_t>(pos)]);
}

std::string fmt_prob(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

HeatmapFiles export_heatmap(const AttentionRecord& record,
                            const std::vector<int>& tokens,
                            const Vocabulary& vocab,
                            const std::vector<std::pair<int, int>>& gold,
                            const std::string& out_prefix) {
  if (record.head_probs.empty()) {
    throw DataError("cannot export an attention record with no heads");
  }
  const SegmentLayout& lay = record.layout;
  lay.validate();
  if (static_cast<int>(tokens.size()) != lay.n) {
    throw ShapeError("token row length " + std::to_string(tokens.size()) +
                     " does not match layout length " + std::to_string(lay.n));
  }
  const MatD probs = record.head_average();

  HeatmapFiles files;
  files.csv_path = out_prefix + ".csv";
  files.pgm_path = out_prefix + ".pgm";
  files.gold_path = out_prefix + ".gold";

  std::ofstream csv(files.csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot write '" + files.csv_path + "'");
  csv << "query";
  for (int c = 0; c < lay.n; ++c) {
    csv << ',' << position_label(lay, vocab, tokens, c);
  }
  csv << '\n';
  for (int r = 0; r < lay.n; ++r) {
    csv << position_label(lay, vocab, tokens, r);
    for (int c = 0; c < lay.n; ++c) csv << ',' << fmt_prob(probs(r, c));
    csv << '\n';
  }
  csv.close();
  if (!csv) throw IoError("failed writing '" + files.csv_path + "'");

  // Fixed [0, 0.15] gray scale; everything at or above 0.15 saturates.
  std::ofstream pgm(files.pgm_path, std::ios::trunc);
  if (!pgm) throw IoError("cannot write '" + files.pgm_path + "'");
  pgm << "P2\n" << lay.n << ' ' << lay.n << "\n255\n";
  for (int r = 0; r < lay.n; ++r) {
    for (int c = 0; c < lay.n; ++c) {
      const double p = std::min(probs(r, c), 0.15);
      const long pixel = std::lround(255.0 * p / 0.15);
      pgm << pixel << (c + 1 == lay.n ? '\n' : ' ');
    }
  }
  pgm.close();
  if (!pgm) throw IoError("failed writing '" + files.pgm_path + "'");

  std::ofstream gf(files.gold_path, std::ios::trunc);
  if (!gf) throw IoError("cannot write '" + files.gold_path + "'");
  for (const auto& [p, q] : gold) gf << p << '-' << q << '\n';
  gf.close();
  if (!gf) throw IoError("failed writing '" + files.gold_path + "'");
  return files;
}

HeatmapCsv read_heatmap_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
  HeatmapCsv out;
  {
    std::istringstream header(line);
    std::string cell;
    if (!std::getline(header, cell, ',') || cell != "query") {
      throw IoError("'" + path + "' does not start with a query/key header");
    }
    while (std::getline(header, cell, ',')) out.col_labels.push_back(cell);
  }
  const auto n = static_cast<Eigen::Index>(out.col_labels.size());
  if (n == 0) throw IoError("'" + path + "' header lists no key columns");
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    if (!std::getline(row, cell, ',')) {
      throw IoError("'" + path + "' has a malformed row");
    }
    out.row_labels.push_back(cell);
    Eigen::Index count = 0;
    while (std::getline(row, cell, ',')) {
      values.push_back(std::stod(cell));
      ++count;
    }
    if (count != n) {
      throw IoError("'" + path + "' row " +
                    std::to_string(out.row_labels.size()) + " has " +
                    std::to_string(count) + " values, expected " +
                    std::to_string(n));
    }
  }
  const auto rows = static_cast<Eigen::Index>(out.row_labels.size());
  out.probs.resize(rows, n);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      out.probs(r, c) = values[static_cast<std::size_t>(r * n + c)];
    }
  }
  return out;
}

std::vector<SequenceRecords> collect_records(const Model<float>& model,
                                             const Batch& batch) {
  std::vector<SequenceRecords> out;
  out.reserve(static_cast<std::size_t>(batch.size()));
  for (std::size_t i = 0; i < static_cast<std::size_t>(batch.size()); ++i) {
    SequenceRecords seq;
    // Analysis looks at the clean sequence, not the masked training view.
    seq.tokens = i < batch.plans.size() ? batch.plans[i].original : batch.rows[i];
    seq.layout = batch.layouts[i];
    if (i < batch.gold.size()) seq.gold = batch.gold[i];
    Tape<float> tape;
    BoundModel<float> bound = bind_model(tape, model, /*requires_grad=*/false);
    ForwardOptions opts;
    opts.mode = ForwardMode::full;
    opts.training = false;
    opts.records = &seq.records;
    encoder_forward(tape, bound, seq.tokens, seq.layout, opts);
    out.push_back(std::move(seq));
  }
  return out;
}

const AttentionRecord& last_record_of(const SequenceRecords& seq, AttnTag tag) {
  const AttentionRecord* best = nullptr;
  for (const AttentionRecord& rec : seq.records) {
    if (rec.tag == tag && (best == nullptr || rec.layer > best->layer)) {
      best = &rec;
    }
  }
  if (best == nullptr) {
    throw DataError("sequence has no " + to_string(tag) + " attention record");
  }
  return *best;
}

std::string param_report_table(const std::vector<std::string>& names,
                               const std::vector<ModelConfig>& cfgs) {
  if (names.size() != cfgs.size()) {
    throw ConfigError("parameter report needs one name per config");
  }
  std::ostringstream out;
  out << "variant            total   embeddings      per-layer (ia+ca)\n";
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    ParameterReport rep = count_parameters(cfgs[i]);
    char line[160];
    std::snprintf(line, sizeof(line), "%-12s %12lld %12lld   ", names[i].c_str(),
                  static_cast<long long>(rep.total),
                  static_cast<long long>(rep.embeddings));
    out << line;
    for (std::size_t l = 0; l < rep.per_layer_ia.size(); ++l) {
      if (l) out << ' ';
      out << rep.per_layer_ia[l] << '+' << rep.per_layer_ca[l];
    }
    out << '\n';
  }
  return out.str();
}

ParamRelations param_relations(const ModelConfig& ma, const ModelConfig& da,
                               const ModelConfig& da_reduce,
                               const ModelConfig& da_share) {
  ParamRelations rel;
  rel.ma = count_parameters(ma).total;
  rel.da = count_parameters(da).total;
  rel.da_reduce = count_parameters(da_reduce).total;
  rel.da_share = count_parameters(da_share).total;
  rel.share_equals_ma = rel.da_share == rel.ma;
  rel.da_exceeds_ma = rel.da > rel.ma;
  rel.reduce_below_da = rel.da_reduce < rel.da;
  return rel;
}

}  // namespace dattn
