#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dattn/batch.hpp"
#include "dattn/errors.hpp"

namespace dattn {

// ---------------------------------------------------------------------------
// Base grammar
// ---------------------------------------------------------------------------

enum class WordClass : std::uint8_t { DET, NOUN, VERB, ADJ, ADV };
constexpr int kNumWordClasses = 5;

std::string to_string(WordClass c);

struct GrammarConfig {
  int lexicon_size = 96;      // content words shared by all derived languages
  double zipf_exponent = 1.1; // rank distribution within each word class
};

/// Contiguous id range [begin, end) of one word class within the base
/// lexicon.
struct ClassRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
};

/// Splits the lexicon into the five class ranges (every class non-empty).
std::vector<ClassRange> class_ranges(const GrammarConfig& cfg);

struct BaseSentence {
  std::vector<int> words;  // base lexicon ids
  std::vector<WordClass> classes;
  int length() const { return static_cast<int>(words.size()); }
};

/// Template-grammar sentences with Zipf-distributed word choice inside each
/// class. Deterministic under the seed.
std::vector<BaseSentence> generate_base_corpus(const GrammarConfig& cfg,
                                               std::uint64_t seed,
                                               int num_sentences);

// ---------------------------------------------------------------------------
// Derived toy languages
// ---------------------------------------------------------------------------

/// A toy language is a bijective re-labeling of the base lexicon plus a
/// deterministic per-sentence position permutation. reorder_blocks == 0 keeps
/// base order; k >= 1 reverses word order inside each of k equal chunks
/// (k == 1 reverses the whole sentence).
struct ToyLanguageSpec {
  int language_id = 0;
  std::vector<int> substitution;  // base word id -> language-local word id
  int reorder_blocks = 0;
  double resource_weight = 1.0;

  void validate() const;
  std::vector<int> inverse_substitution() const;
};

/// Language that keeps base ids and base order.
ToyLanguageSpec identity_language(int language_id, const GrammarConfig& cfg);

/// Language with a random class-preserving substitution cipher; word order
/// per reorder_blocks.
ToyLanguageSpec cipher_language(int language_id, const GrammarConfig& cfg,
                                std::uint64_t seed, int reorder_blocks);

/// The position permutation sigma for a sentence of the given length:
/// sigma[i] is where base position i lands.
std::vector<int> reorder_permutation(int length, int reorder_blocks);

struct DerivedSentence {
  std::vector<int> words;      // language-local word ids
  std::vector<int> alignment;  // base position -> derived position
};

DerivedSentence derive_language(const BaseSentence& base,
                                const ToyLanguageSpec& spec);

// ---------------------------------------------------------------------------
// Vocabulary over specials + per-language lexicons
// ---------------------------------------------------------------------------

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;

  int num_languages = 0;
  int lexicon_size = 0;
  std::vector<long long> frequency;  // optional per-token corpus counts

  int size() const { return kNumSpecials + num_languages * lexicon_size; }
  int first_content_id() const { return kNumSpecials; }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  int token_id(int language, int word) const {
    if (language < 0 || language >= num_languages) {
      throw IndexError("vocabulary: language " + std::to_string(language) +
                       " outside [0, " + std::to_string(num_languages) + ")");
    }
    if (word < 0 || word >= lexicon_size) {
      throw IndexError("vocabulary: word " + std::to_string(word) +
                       " outside lexicon of " + std::to_string(lexicon_size));
    }
    return kNumSpecials + language * lexicon_size + word;
  }

  std::pair<int, int> language_word(int id) const {
    if (id < kNumSpecials || id >= size()) {
      throw IndexError("vocabulary: id " + std::to_string(id) +
                       " is not a content token");
    }
    int offset = id - kNumSpecials;
    return {offset / lexicon_size, offset % lexicon_size};
  }

  std::string token_string(int id) const;
};

// ---------------------------------------------------------------------------
// Examples and corpora
// ---------------------------------------------------------------------------

struct ParallelExample {
  std::vector<int> src;  // vocabulary ids
  std::vector<int> tgt;
  std::vector<std::pair<int, int>> gold;  // src position -> tgt position
  int lang_src = -1;
  int lang_tgt = -1;
};

ParallelExample build_bilingual_example(const BaseSentence& base,
                                        const ToyLanguageSpec& spec_a,
                                        const ToyLanguageSpec& spec_b,
                                        const Vocabulary& vocab);

struct MonoCorpus {
  int language = -1;
  double resource_weight = 1.0;
  std::vector<std::vector<int>> sentences;   // vocabulary ids
  std::vector<std::vector<WordClass>> classes;  // aligned to sentences
};

MonoCorpus build_mono_corpus(const std::vector<BaseSentence>& base,
                             const ToyLanguageSpec& spec,
                             const Vocabulary& vocab);

struct ParallelCorpus {
  int lang_src = -1;
  int lang_tgt = -1;
  double resource_weight = 1.0;
  std::vector<ParallelExample> examples;
};

ParallelCorpus build_parallel_corpus(const std::vector<BaseSentence>& base,
                                     const ToyLanguageSpec& spec_a,
                                     const ToyLanguageSpec& spec_b,
                                     const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Corpus files
// ---------------------------------------------------------------------------

void write_mono_corpus(const std::string& path, const MonoCorpus& corpus);
void write_parallel_corpus(const std::string& path,
                           const ParallelCorpus& corpus);

struct CorpusFile {
  bool parallel = false;
  int lang_a = -1;
  int lang_b = -1;  // parallel only
  std::vector<std::vector<int>> mono;
  std::vector<ParallelExample> pairs;
};

CorpusFile read_corpus_file(const std::string& path);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct BatchConfig {
  int mono_len = 20;      // fixed monolingual row length
  int max_half_len = 10;  // bilingual half cap, specials included
  double mask_rate = 0.15;
};

/// Packs consecutive sentences (from `cursor`, wrapping) into batch rows of
/// the form [BOS] s1 s2 ... [EOS] PAD*, applies masking, and advances the
/// cursor.
Batch make_mono_batch(const MonoCorpus& corpus, std::size_t& cursor,
                      int batch_rows, const Vocabulary& vocab,
                      const BatchConfig& cfg, std::mt19937_64& rng);

/// Bilingual rows [BOS] X [SEP] PAD* | Y [EOS] PAD*, both halves padded to a
/// common half length; the segment boundary sits at the half length. Gold
/// alignments are offset into row coordinates.
Batch make_bilingual_batch(const ParallelCorpus& corpus, std::size_t& cursor,
                           int batch_rows, const Vocabulary& vocab,
                           const BatchConfig& cfg, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Scheduler
// ---------------------------------------------------------------------------

struct ScheduleConfig {
  int batch_size = 16;
  int mono_ratio = 1;  // batches of each type per cycle, mono first
  int bi_ratio = 1;
};

/// Deterministic alternating batch source: mono_ratio monolingual batches,
/// then bi_ratio bilingual ones, repeating; the corpus for each batch is
/// sampled by resource weight.
class BatchScheduler {
 public:
  BatchScheduler(std::vector<MonoCorpus> mono, std::vector<ParallelCorpus> bi,
                 Vocabulary vocab, BatchConfig batch_cfg, ScheduleConfig sched,
                 std::uint64_t seed);

  Batch next(std::mt19937_64& rng);

  // Persistence hooks for bitwise resume.
  const std::vector<std::size_t>& mono_cursors() const { return mono_cursors_; }
  const std::vector<std::size_t>& bi_cursors() const { return bi_cursors_; }
  long long counter() const { return counter_; }
  void restore(const std::vector<std::size_t>& mono_cursors,
               const std::vector<std::size_t>& bi_cursors, long long counter);

  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<MonoCorpus>& mono() const { return mono_; }
  const std::vector<ParallelCorpus>& bilingual() const { return bi_; }

 private:
  std::vector<MonoCorpus> mono_;
  std::vector<ParallelCorpus> bi_;
  Vocabulary vocab_;
  BatchConfig batch_cfg_;
  ScheduleConfig sched_;
  std::vector<std::size_t> mono_cursors_;
  std::vector<std::size_t> bi_cursors_;
  long long counter_ = 0;

  int pick_weighted(const std::vector<double>& weights, std::mt19937_64& rng);
};

}  // namespace dattn
