#include "dattn/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dattn {

std::string to_string(WordClass c) {
  switch (c) {
    case WordClass::DET: return "DET";
    case WordClass::NOUN: return "NOUN";
    case WordClass::VERB: return "VERB";
    case WordClass::ADJ: return "ADJ";
    case WordClass::ADV: return "ADV";
  }
  return "?";
}

std::vector<ClassRange> class_ranges(const GrammarConfig& cfg) {
  if (cfg.lexicon_size < 50) {
    throw ConfigError("lexicon_size must be >= 50, got " +
                      std::to_string(cfg.lexicon_size));
  }
  // Proportions chosen so nouns/verbs dominate; NOUN absorbs rounding.
  const int L = cfg.lexicon_size;
  int det = std::max(1, static_cast<int>(std::lround(0.06 * L)));
  int verb = std::max(1, static_cast<int>(std::lround(0.31 * L)));
  int adj = std::max(1, static_cast<int>(std::lround(0.15 * L)));
  int adv = std::max(1, static_cast<int>(std::lround(0.06 * L)));
  int noun = L - det - verb - adj - adv;
  if (noun < 1) throw ConfigError("lexicon too small for the class split");
  std::vector<ClassRange> ranges(kNumWordClasses);
  int at = 0;
  auto assign = [&](WordClass c, int size) {
    ranges[static_cast<int>(c)] = {at, at + size};
    at += size;
  };
  assign(WordClass::DET, det);
  assign(WordClass::NOUN, noun);
  assign(WordClass::VERB, verb);
  assign(WordClass::ADJ, adj);
  assign(WordClass::ADV, adv);
  return ranges;
}

namespace {

// Sentence templates; content length spans 3..8.
const std::vector<std::vector<WordClass>>& templates() {
  using W = WordClass;
  static const std::vector<std::vector<W>> kTemplates = {
      {W::NOUN, W::VERB, W::NOUN},
      {W::DET, W::NOUN, W::VERB, W::NOUN},
      {W::DET, W::NOUN, W::VERB, W::DET, W::NOUN},
      {W::DET, W::ADJ, W::NOUN, W::VERB, W::DET, W::NOUN},
      {W::DET, W::ADJ, W::NOUN, W::VERB, W::DET, W::ADJ, W::NOUN},
      {W::DET, W::ADJ, W::NOUN, W::ADV, W::VERB, W::DET, W::ADJ, W::NOUN},
  };
  return kTemplates;
}

// Uniform double in [0,1) from the top 53 bits; bit-stable across platforms.
double canonical_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct ZipfSampler {
  std::vector<double> cumulative;

  ZipfSampler(int size, double exponent) {
    cumulative.resize(static_cast<std::size_t>(size));
    double acc = 0.0;
    for (int k = 0; k < size; ++k) {
      acc += std::pow(static_cast<double>(k + 1), -exponent);
      cumulative[static_cast<std::size_t>(k)] = acc;
    }
  }

  int draw(std::mt19937_64& rng) const {
    double u = canonical_unit(rng) * cumulative.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    return static_cast<int>(it - cumulative.begin());
  }
};

}  // namespace

std::vector<BaseSentence> generate_base_corpus(const GrammarConfig& cfg,
                                               std::uint64_t seed,
                                               int num_sentences) {
  if (num_sentences < 0) throw ConfigError("num_sentences must be >= 0");
  if (templates().empty()) throw ConfigError("grammar has no templates");
  std::vector<ClassRange> ranges = class_ranges(cfg);
  std::vector<ZipfSampler> samplers;
  samplers.reserve(ranges.size());
  for (const ClassRange& r : ranges) {
    samplers.emplace_back(r.size(), cfg.zipf_exponent);
  }
  std::mt19937_64 rng(seed);
  std::vector<BaseSentence> corpus;
  corpus.reserve(static_cast<std::size_t>(num_sentences));
  for (int s = 0; s < num_sentences; ++s) {
    std::size_t ti = static_cast<std::size_t>(
        canonical_unit(rng) * static_cast<double>(templates().size()));
    if (ti >= templates().size()) ti = templates().size() - 1;
    const auto& tpl = templates()[ti];
    BaseSentence sentence;
    sentence.words.reserve(tpl.size());
    sentence.classes = tpl;
    for (WordClass c : tpl) {
      int ci = static_cast<int>(c);
      int rank = samplers[static_cast<std::size_t>(ci)].draw(rng);
      sentence.words.push_back(ranges[static_cast<std::size_t>(ci)].begin +
                               rank);
    }
    corpus.push_back(std::move(sentence));
  }
  return corpus;
}

void ToyLanguageSpec::validate() const {
  if (substitution.empty()) {
    throw CorpusError("language spec has an empty substitution");
  }
  std::vector<bool> seen(substitution.size(), false);
  for (int v : substitution) {
    if (v < 0 || v >= static_cast<int>(substitution.size()) || seen[v]) {
      throw CorpusError("substitution of language " +
                        std::to_string(language_id) + " is not a bijection");
    }
    seen[static_cast<std::size_t>(v)] = true;
  }
  if (reorder_blocks < 0) {
    throw CorpusError("reorder_blocks must be >= 0");
  }
  if (!(resource_weight > 0.0)) {
    throw CorpusError("resource_weight must be positive");
  }
}

std::vector<int> ToyLanguageSpec::inverse_substitution() const {
  validate();
  std::vector<int> inv(substitution.size());
  for (std::size_t i = 0; i < substitution.size(); ++i) {
    inv[static_cast<std::size_t>(substitution[i])] = static_cast<int>(i);
  }
  return inv;
}

ToyLanguageSpec identity_language(int language_id, const GrammarConfig& cfg) {
  ToyLanguageSpec spec;
  spec.language_id = language_id;
  spec.substitution.resize(static_cast<std::size_t>(cfg.lexicon_size));
  std::iota(spec.substitution.begin(), spec.substitution.end(), 0);
  spec.reorder_blocks = 0;
  return spec;
}

ToyLanguageSpec cipher_language(int language_id, const GrammarConfig& cfg,
                                std::uint64_t seed, int reorder_blocks) {
  ToyLanguageSpec spec = identity_language(language_id, cfg);
  spec.reorder_blocks = reorder_blocks;
  // Permute within each word class so the cipher preserves classes.
  std::mt19937_64 rng(seed);
  for (const ClassRange& r : class_ranges(cfg)) {
    for (int i = r.end - 1; i > r.begin; --i) {
      int j = r.begin + static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                      i - r.begin + 1));
      std::swap(spec.substitution[static_cast<std::size_t>(i)],
                spec.substitution[static_cast<std::size_t>(j)]);
    }
  }
  return spec;
}

std::vector<int> reorder_permutation(int length, int reorder_blocks) {
  std::vector<int> sigma(static_cast<std::size_t>(length));
  if (reorder_blocks <= 0) {
    std::iota(sigma.begin(), sigma.end(), 0);
    return sigma;
  }
  int blocks = std::min(reorder_blocks, length);
  int base_size = length / blocks;
  int extra = length % blocks;  // first `extra` blocks are one longer
  int start = 0;
  for (int b = 0; b < blocks; ++b) {
    int size = base_size + (b < extra ? 1 : 0);
    for (int i = 0; i < size; ++i) {
      sigma[static_cast<std::size_t>(start + i)] = start + size - 1 - i;
    }
    start += size;
  }
  return sigma;
}

DerivedSentence derive_language(const BaseSentence& base,
                                const ToyLanguageSpec& spec) {
  spec.validate();
  DerivedSentence out;
  const int m = base.length();
  out.words.assign(static_cast<std::size_t>(m), -1);
  out.alignment = reorder_permutation(m, spec.reorder_blocks);
  for (int i = 0; i < m; ++i) {
    int w = base.words[static_cast<std::size_t>(i)];
    if (w < 0 || w >= static_cast<int>(spec.substitution.size())) {
      throw CorpusError("base word " + std::to_string(w) +
                        " outside substitution domain of language " +
                        std::to_string(spec.language_id));
    }
    out.words[static_cast<std::size_t>(out.alignment[static_cast<std::size_t>(i)])] =
        spec.substitution[static_cast<std::size_t>(w)];
  }
  return out;
}

std::string Vocabulary::token_string(int id) const {
  switch (id) {
    case kPad: return "[PAD]";
    case kBos: return "[BOS]";
    case kEos: return "[EOS]";
    case kSep: return "[SEP]";
    case kMask: return "[MASK]";
    default: break;
  }
  auto [lang, word] = language_word(id);
  return "l" + std::to_string(lang) + ":w" + std::to_string(word);
}

ParallelExample build_bilingual_example(const BaseSentence& base,
                                        const ToyLanguageSpec& spec_a,
                                        const ToyLanguageSpec& spec_b,
                                        const Vocabulary& vocab) {
  DerivedSentence a = derive_language(base, spec_a);
  DerivedSentence b = derive_language(base, spec_b);
  ParallelExample ex;
  ex.lang_src = spec_a.language_id;
  ex.lang_tgt = spec_b.language_id;
  ex.src.reserve(a.words.size());
  for (int w : a.words) ex.src.push_back(vocab.token_id(ex.lang_src, w));
  ex.tgt.reserve(b.words.size());
  for (int w : b.words) ex.tgt.push_back(vocab.token_id(ex.lang_tgt, w));
  for (int i = 0; i < base.length(); ++i) {
    ex.gold.emplace_back(a.alignment[static_cast<std::size_t>(i)],
                         b.alignment[static_cast<std::size_t>(i)]);
  }
  std::sort(ex.gold.begin(), ex.gold.end());
  return ex;
}

MonoCorpus build_mono_corpus(const std::vector<BaseSentence>& base,
                             const ToyLanguageSpec& spec,
                             const Vocabulary& vocab) {
  MonoCorpus corpus;
  corpus.language = spec.language_id;
  corpus.resource_weight = spec.resource_weight;
  for (const BaseSentence& b : base) {
    DerivedSentence d = derive_language(b, spec);
    std::vector<int> ids;
    ids.reserve(d.words.size());
    for (int w : d.words) ids.push_back(vocab.token_id(spec.language_id, w));
    std::vector<WordClass> classes(b.classes.size());
    for (int i = 0; i < b.length(); ++i) {
      classes[static_cast<std::size_t>(d.alignment[static_cast<std::size_t>(i)])] =
          b.classes[static_cast<std::size_t>(i)];
    }
    corpus.sentences.push_back(std::move(ids));
    corpus.classes.push_back(std::move(classes));
  }
  return corpus;
}

ParallelCorpus build_parallel_corpus(const std::vector<BaseSentence>& base,
                                     const ToyLanguageSpec& spec_a,
                                     const ToyLanguageSpec& spec_b,
                                     const Vocabulary& vocab) {
  ParallelCorpus corpus;
  corpus.lang_src = spec_a.language_id;
  corpus.lang_tgt = spec_b.language_id;
  corpus.resource_weight = std::min(spec_a.resource_weight,
                                    spec_b.resource_weight);
  for (const BaseSentence& b : base) {
    corpus.examples.push_back(
        build_bilingual_example(b, spec_a, spec_b, vocab));
  }
  return corpus;
}

void write_mono_corpus(const std::string& path, const MonoCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "lang=" << corpus.language << " type=mono\n";
  for (const auto& sentence : corpus.sentences) {
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      if (i) out << ' ';
      out << sentence[i];
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

void write_parallel_corpus(const std::string& path,
                           const ParallelCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "lang=" << corpus.lang_src << "-" << corpus.lang_tgt
      << " type=parallel\n";
  for (const ParallelExample& ex : corpus.examples) {
    for (std::size_t i = 0; i < ex.src.size(); ++i) {
      if (i) out << ' ';
      out << ex.src[i];
    }
    out << " ||| ";
    for (std::size_t i = 0; i < ex.tgt.size(); ++i) {
      if (i) out << ' ';
      out << ex.tgt[i];
    }
    out << " |||";
    for (const auto& [i, j] : ex.gold) out << ' ' << i << '-' << j;
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

namespace {

std::vector<int> parse_id_list(const std::string& text) {
  std::vector<int> ids;
  std::istringstream in(text);
  int v;
  while (in >> v) ids.push_back(v);
  return ids;
}

}  // namespace

CorpusFile read_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string header;
  if (!std::getline(in, header)) {
    throw CorpusError("corpus file '" + path + "' is empty");
  }
  CorpusFile file;
  std::string lang_field, type_field;
  {
    std::istringstream hs(header);
    hs >> lang_field >> type_field;
  }
  if (lang_field.rfind("lang=", 0) != 0 || type_field.rfind("type=", 0) != 0) {
    throw CorpusError("corpus file '" + path + "' has a malformed header: '" +
                      header + "'");
  }
  std::string langs = lang_field.substr(5);
  std::string type = type_field.substr(5);
  if (type == "mono") {
    file.parallel = false;
    file.lang_a = std::stoi(langs);
  } else if (type == "parallel") {
    file.parallel = true;
    auto dash = langs.find('-');
    if (dash == std::string::npos) {
      throw CorpusError("parallel corpus header needs lang=<a>-<b>");
    }
    file.lang_a = std::stoi(langs.substr(0, dash));
    file.lang_b = std::stoi(langs.substr(dash + 1));
  } else {
    throw CorpusError("corpus type '" + type + "' is not mono or parallel");
  }
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (!file.parallel) {
      file.mono.push_back(parse_id_list(line));
      continue;
    }
    auto p1 = line.find("|||");
    auto p2 = line.find("|||", p1 == std::string::npos ? 0 : p1 + 3);
    if (p1 == std::string::npos || p2 == std::string::npos) {
      throw CorpusError("parallel corpus line " + std::to_string(line_no) +
                        " needs two ||| separators");
    }
    ParallelExample ex;
    ex.lang_src = file.lang_a;
    ex.lang_tgt = file.lang_b;
    ex.src = parse_id_list(line.substr(0, p1));
    ex.tgt = parse_id_list(line.substr(p1 + 3, p2 - p1 - 3));
    std::istringstream gs(line.substr(p2 + 3));
    std::string pair;
    while (gs >> pair) {
      auto dash = pair.find('-');
      if (dash == std::string::npos) {
        throw CorpusError("alignment pair '" + pair + "' on line " +
                          std::to_string(line_no) + " is not i-j");
      }
      ex.gold.emplace_back(std::stoi(pair.substr(0, dash)),
                           std::stoi(pair.substr(dash + 1)));
    }
    file.pairs.push_back(std::move(ex));
  }
  return file;
}

namespace {

SegmentLayout mono_layout(int n, int language, int eos_pos) {
  SegmentLayout lay;
  lay.n = n;
  lay.boundary = n;
  lay.lang_x = language;
  lay.lang_y = language;
  lay.bos_pos = 0;
  lay.eos_pos = eos_pos;
  lay.real.assign(static_cast<std::size_t>(n), false);
  for (int i = 0; i <= eos_pos; ++i) lay.real[static_cast<std::size_t>(i)] = true;
  return lay;
}

}  // namespace

Batch make_mono_batch(const MonoCorpus& corpus, std::size_t& cursor,
                      int batch_rows, const Vocabulary& vocab,
                      const BatchConfig& cfg, std::mt19937_64& rng) {
  if (corpus.sentences.empty()) {
    throw DataError("make_mono_batch: corpus for language " +
                    std::to_string(corpus.language) + " is empty");
  }
  if (cfg.mono_len < 3) throw ConfigError("mono_len must be at least 3");
  Batch batch;
  batch.data_type = DataType::mono;
  const int n = cfg.mono_len;
  for (int r = 0; r < batch_rows; ++r) {
    std::vector<int> tokens;
    tokens.reserve(static_cast<std::size_t>(n));
    tokens.push_back(Vocabulary::kBos);
    // Pack whole sentences while they fit (room for [EOS] kept); always pack
    // at least one, truncated if necessary.
    bool first = true;
    while (true) {
      const std::vector<int>& s = corpus.sentences[cursor % corpus.sentences.size()];
      int room = n - 1 - static_cast<int>(tokens.size());
      if (static_cast<int>(s.size()) <= room) {
        tokens.insert(tokens.end(), s.begin(), s.end());
        cursor = (cursor + 1) % corpus.sentences.size();
        first = false;
        continue;
      }
      if (first) {
        tokens.insert(tokens.end(), s.begin(), s.begin() + room);
        cursor = (cursor + 1) % corpus.sentences.size();
        batch.truncated = true;
      }
      break;
    }
    int eos_pos = static_cast<int>(tokens.size());
    tokens.push_back(Vocabulary::kEos);
    tokens.resize(static_cast<std::size_t>(n), Vocabulary::kPad);
    SegmentLayout lay = mono_layout(n, corpus.language, eos_pos);
    std::vector<bool> maskable(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) maskable[static_cast<std::size_t>(i)] = lay.is_content(i);
    MaskingPlan plan =
        plan_masking(tokens, maskable, cfg.mask_rate, Vocabulary::kMask,
                     vocab.first_content_id(), vocab.size(), rng);
    batch.rows.push_back(plan.input_tokens);
    batch.layouts.push_back(std::move(lay));
    batch.plans.push_back(std::move(plan));
  }
  batch.gold.assign(batch.rows.size(), {});
  return batch;
}

Batch make_bilingual_batch(const ParallelCorpus& corpus, std::size_t& cursor,
                           int batch_rows, const Vocabulary& vocab,
                           const BatchConfig& cfg, std::mt19937_64& rng) {
  if (corpus.examples.empty()) {
    throw DataError("make_bilingual_batch: empty parallel corpus");
  }
  if (cfg.max_half_len < 3) throw ConfigError("max_half_len must be at least 3");
  Batch batch;
  batch.data_type = DataType::bilingual;

  // First walk the rows to fix a common half length for the batch.
  std::vector<const ParallelExample*> picked;
  std::size_t scan = cursor;
  int half = 0;
  for (int r = 0; r < batch_rows; ++r) {
    const ParallelExample& ex = corpus.examples[scan % corpus.examples.size()];
    scan = (scan + 1) % corpus.examples.size();
    picked.push_back(&ex);
    int x_len = std::min(static_cast<int>(ex.src.size()), cfg.max_half_len - 2);
    int y_len = std::min(static_cast<int>(ex.tgt.size()), cfg.max_half_len - 1);
    half = std::max(half, std::max(2 + x_len, y_len + 1));
  }
  cursor = scan;

  const int n = 2 * half;
  for (const ParallelExample* exp : picked) {
    const ParallelExample& ex = *exp;
    int x_len = std::min(static_cast<int>(ex.src.size()), cfg.max_half_len - 2);
    int y_len = std::min(static_cast<int>(ex.tgt.size()), cfg.max_half_len - 1);
    if (x_len < static_cast<int>(ex.src.size()) ||
        y_len < static_cast<int>(ex.tgt.size())) {
      batch.truncated = true;
    }
    std::vector<int> tokens(static_cast<std::size_t>(n), Vocabulary::kPad);
    tokens[0] = Vocabulary::kBos;
    for (int i = 0; i < x_len; ++i) {
      tokens[static_cast<std::size_t>(1 + i)] = ex.src[static_cast<std::size_t>(i)];
    }
    tokens[static_cast<std::size_t>(1 + x_len)] = Vocabulary::kSep;
    for (int j = 0; j < y_len; ++j) {
      tokens[static_cast<std::size_t>(half + j)] = ex.tgt[static_cast<std::size_t>(j)];
    }
    tokens[static_cast<std::size_t>(half + y_len)] = Vocabulary::kEos;

    SegmentLayout lay;
    lay.n = n;
    lay.boundary = half;
    lay.lang_x = ex.lang_src;
    lay.lang_y = ex.lang_tgt;
    lay.bos_pos = 0;
    lay.sep_pos = 1 + x_len;
    lay.eos_pos = half + y_len;
    lay.real.assign(static_cast<std::size_t>(n), false);
    for (int i = 0; i <= lay.sep_pos; ++i) lay.real[static_cast<std::size_t>(i)] = true;
    for (int i = half; i <= lay.eos_pos; ++i) lay.real[static_cast<std::size_t>(i)] = true;

    std::vector<std::pair<int, int>> gold;
    for (const auto& [i, j] : ex.gold) {
      if (i < x_len && j < y_len) gold.emplace_back(1 + i, half + j);
    }

    std::vector<bool> maskable(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) maskable[static_cast<std::size_t>(i)] = lay.is_content(i);
    MaskingPlan plan =
        plan_masking(tokens, maskable, cfg.mask_rate, Vocabulary::kMask,
                     vocab.first_content_id(), vocab.size(), rng);
    batch.rows.push_back(plan.input_tokens);
    batch.layouts.push_back(std::move(lay));
    batch.plans.push_back(std::move(plan));
    batch.gold.push_back(std::move(gold));
  }
  return batch;
}

BatchScheduler::BatchScheduler(std::vector<MonoCorpus> mono,
                               std::vector<ParallelCorpus> bi,
                               Vocabulary vocab, BatchConfig batch_cfg,
                               ScheduleConfig sched, std::uint64_t /*seed*/)
    : mono_(std::move(mono)),
      bi_(std::move(bi)),
      vocab_(vocab),
      batch_cfg_(batch_cfg),
      sched_(sched) {
  if (sched_.mono_ratio < 0 || sched_.bi_ratio < 0 ||
      sched_.mono_ratio + sched_.bi_ratio == 0) {
    throw SchedulerError("schedule ratios must be non-negative and not both 0");
  }
  if (sched_.mono_ratio > 0 && mono_.empty()) {
    throw SchedulerError("schedule requires monolingual batches but no "
                         "monolingual corpus was given");
  }
  if (sched_.bi_ratio > 0 && bi_.empty()) {
    throw SchedulerError("schedule requires bilingual batches but no "
                         "parallel corpus was given");
  }
  mono_cursors_.assign(mono_.size(), 0);
  bi_cursors_.assign(bi_.size(), 0);
}

void BatchScheduler::restore(const std::vector<std::size_t>& mono_cursors,
                             const std::vector<std::size_t>& bi_cursors,
                             long long counter) {
  if (mono_cursors.size() != mono_cursors_.size() ||
      bi_cursors.size() != bi_cursors_.size()) {
    throw SchedulerError("scheduler restore state does not match the corpora");
  }
  mono_cursors_ = mono_cursors;
  bi_cursors_ = bi_cursors;
  counter_ = counter;
}

int BatchScheduler::pick_weighted(const std::vector<double>& weights,
                                  std::mt19937_64& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = (static_cast<double>(rng() >> 11) * 0x1.0p-53) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

Batch BatchScheduler::next(std::mt19937_64& rng) {
  const int cycle = sched_.mono_ratio + sched_.bi_ratio;
  const long long phase = counter_ % cycle;
  ++counter_;
  if (phase < sched_.mono_ratio) {
    std::vector<double> weights;
    weights.reserve(mono_.size());
    for (const MonoCorpus& c : mono_) weights.push_back(c.resource_weight);
    int pick = pick_weighted(weights, rng);
    return make_mono_batch(mono_[static_cast<std::size_t>(pick)],
                           mono_cursors_[static_cast<std::size_t>(pick)],
                           sched_.batch_size, vocab_, batch_cfg_, rng);
  }
  std::vector<double> weights;
  weights.reserve(bi_.size());
  for (const ParallelCorpus& c : bi_) weights.push_back(c.resource_weight);
  int pick = pick_weighted(weights, rng);
  return make_bilingual_batch(bi_[static_cast<std::size_t>(pick)],
                              bi_cursors_[static_cast<std::size_t>(pick)],
                              sched_.batch_size, vocab_, batch_cfg_, rng);
}

}  // namespace dattn
