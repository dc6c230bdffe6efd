#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "dattn/finite_diff.hpp"
#include "dattn/model.hpp"

using namespace dattn;

namespace {

ModelConfig tiny_cfg(VariantKind kind) {
  ModelConfig cfg;
  cfg.vocab_size = 23;  // 5 specials + 2 languages x 9 words
  cfg.d_model = 8;
  cfg.d_k = 4;
  cfg.num_heads = 2;
  cfg.num_layers = 2;
  cfg.ffn_dim = 16;
  cfg.max_positions = 12;
  cfg.num_languages = 2;
  cfg.embedding_dim = 8;
  cfg.dropout_p = 0.0;
  switch (kind) {
    case VariantKind::MA: cfg.variant = variant_ma(); break;
    case VariantKind::DA: cfg.variant = variant_da(); break;
    case VariantKind::DA_REDUCE:
      cfg.variant = variant_da_reduce();
      cfg.d_model = 6;
      cfg.d_k = 3;
      cfg.ffn_dim = 12;
      break;
    case VariantKind::DA_SHARE: cfg.variant = variant_da_share(); break;
  }
  cfg.validate();
  return cfg;
}

// [BOS] c c [SEP] | c c c [EOS], both languages, no padding.
SegmentLayout bilingual_layout() {
  SegmentLayout lay;
  lay.n = 8;
  lay.boundary = 4;
  lay.lang_x = 0;
  lay.lang_y = 1;
  lay.bos_pos = 0;
  lay.sep_pos = 3;
  lay.eos_pos = 7;
  lay.real.assign(8, true);
  lay.validate();
  return lay;
}

SegmentLayout mono_layout(int n, int language) {
  SegmentLayout lay;
  lay.n = n;
  lay.boundary = n;
  lay.lang_x = language;
  lay.lang_y = language;
  lay.bos_pos = 0;
  lay.eos_pos = n - 1;
  lay.real.assign(static_cast<std::size_t>(n), true);
  lay.validate();
  return lay;
}

std::vector<int> bilingual_tokens() { return {1, 5, 6, 3, 14, 15, 16, 2}; }

bool bit_identical(const MatF& a, const MatF& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(),
                     sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

MatD ln_ref(const MatD& x, const MatD& gain, const MatD& bias, double eps) {
  MatD out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = x.row(r).mean();
    double var = (x.row(r).array() - mu).square().sum() / double(x.cols());
    out.row(r) = (((x.row(r).array() - mu) / std::sqrt(var + eps)) *
                      gain.row(0).array() +
                  bias.row(0).array())
                     .matrix();
  }
  return out;
}

MatD ffn_ref(const MatD& x, const MatD& w1, const MatD& b1, const MatD& w2,
             const MatD& b2) {
  MatD h = x * w1;
  h.rowwise() += b1.row(0);
  h = h.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  });
  MatD out = h * w2;
  out.rowwise() += b2.row(0);
  return out;
}

}  // namespace

TEST_CASE("parameter counting matches a hand-enumerated tiny model") {
  ModelConfig cfg;
  cfg.vocab_size = 11;
  cfg.d_model = 4;
  cfg.d_k = 4;
  cfg.num_heads = 1;
  cfg.num_layers = 1;
  cfg.ffn_dim = 8;
  cfg.max_positions = 0;
  cfg.num_languages = 0;
  cfg.embedding_dim = 4;
  cfg.use_bias = false;
  cfg.ln_affine = false;
  cfg.variant = variant_ma();
  cfg.validate();
  ParameterReport rep = count_parameters(cfg);
  CHECK(rep.embeddings == 44);         // 11 x 4 token table only
  CHECK(rep.per_layer_ia[0] == 128);   // QKVO 4*16 + FFN 2*32
  CHECK(rep.per_layer_ca[0] == 0);
  CHECK(rep.lm_head == 0);             // tied to the token table
  CHECK(rep.total == 172);
}

TEST_CASE("sharing the cross sublayer restores mixed-attention parity") {
  struct Dims { int d, heads, layers, ffn; };
  for (Dims dims : {Dims{8, 2, 1, 16}, Dims{12, 3, 2, 24}, Dims{16, 4, 3, 64}}) {
    ModelConfig base;
    base.vocab_size = 31;
    base.d_model = dims.d;
    base.d_k = dims.d / dims.heads;
    base.num_heads = dims.heads;
    base.num_layers = dims.layers;
    base.ffn_dim = dims.ffn;
    base.max_positions = 16;
    base.num_languages = 3;
    base.embedding_dim = dims.d;

    ModelConfig ma = base;
    ma.variant = variant_ma();
    ModelConfig da = base;
    da.variant = variant_da();
    ModelConfig share = base;
    share.variant = variant_da_share();

    ParameterReport ma_rep = count_parameters(ma);
    ParameterReport da_rep = count_parameters(da);
    ParameterReport share_rep = count_parameters(share);
    CHECK(share_rep.total == ma_rep.total);
    CHECK(da_rep.total > ma_rep.total);
    long long ca_sum = 0;
    for (long long c : da_rep.per_layer_ca) ca_sum += c;
    CHECK(da_rep.total - ma_rep.total == ca_sum);
  }
}

TEST_CASE("embedding sums token, position and language rows") {
  ModelConfig cfg = tiny_cfg(VariantKind::MA);
  std::mt19937_64 rng(3);
  Model<float> model = init_model<float>(cfg, rng);
  SegmentLayout lay = bilingual_layout();
  std::vector<int> tokens = bilingual_tokens();

  {
    Model<float> zeros = model;
    for (auto& [name, m] : zeros.params) m.setZero();
    Tape<float> t;
    BoundModel<float> bm = bind_model(t, zeros, false);
    Var<float> e = embed(t, bm, tokens, lay);
    CHECK(t.value(e).cwiseAbs().maxCoeff() == 0.0f);
    CHECK(t.rows(e) == 8);
    CHECK(t.cols(e) == cfg.embedding_dim);
  }
  {
    Tape<float> t;
    BoundModel<float> bm = bind_model(t, model, false);
    MatF a = t.value(embed(t, bm, tokens, lay));
    SegmentLayout other = lay;
    other.lang_y = 0;  // same tokens, different second-segment language
    MatF b = t.value(embed(t, bm, tokens, other));
    CHECK((a - b).cwiseAbs().maxCoeff() > 0.0f);
  }
  {
    Tape<float> t;
    BoundModel<float> bm = bind_model(t, model, false);
    std::vector<int> bad = tokens;
    bad[2] = cfg.vocab_size;  // one past the table
    CHECK_THROWS_AS(embed(t, bm, bad, lay), IndexError);

    SegmentLayout long_lay = mono_layout(cfg.max_positions + 1, 0);
    std::vector<int> long_tokens(static_cast<std::size_t>(long_lay.n), 5);
    CHECK_THROWS_AS(embed(t, bm, long_tokens, long_lay), IndexError);
  }
}

TEST_CASE("attention with one visible key returns that key's value row") {
  ModelConfig cfg = tiny_cfg(VariantKind::MA);
  cfg.num_heads = 1;
  cfg.d_k = 8;
  cfg.validate();
  std::mt19937_64 rng(5);
  Model<float> model = init_model<float>(cfg, rng);
  Tape<float> t;
  BoundModel<float> bm = bind_model(t, model, false);
  MatF q = MatF::Random(2, 8);
  MatF kv = MatF::Random(1, 8);
  BoolMat mask(2, 1);
  mask.setConstant(true);
  Var<float> out = multi_head_attention(t, bm, t.leaf(q, false),
                                        t.leaf(kv, false), mask, false, false,
                                        "", nullptr);
  CHECK((t.value(out).row(0) - kv.row(0)).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK((t.value(out).row(1) - kv.row(0)).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("attention over equal keys is uniform") {
  ModelConfig cfg = tiny_cfg(VariantKind::MA);
  cfg.num_heads = 1;
  cfg.d_k = 8;
  cfg.validate();
  std::mt19937_64 rng(7);
  Model<float> model = init_model<float>(cfg, rng);
  Tape<float> t;
  BoundModel<float> bm = bind_model(t, model, false);
  MatF q = MatF::Random(2, 8);
  MatF kv(3, 8);
  kv.row(0) = MatF::Random(1, 8);
  kv.row(1) = kv.row(0);
  kv.row(2) = kv.row(0);
  BoolMat mask(2, 3);
  mask.setConstant(true);
  mask(1, 2) = false;  // second query sees only two of the equal keys
  std::vector<MatD> probs;
  multi_head_attention(t, bm, t.leaf(q, false), t.leaf(kv, false), mask, false,
                       false, "", &probs);
  REQUIRE(probs.size() == 1);
  for (int c = 0; c < 3; ++c) {
    CHECK(probs[0](0, c) == doctest::Approx(1.0 / 3).epsilon(1e-6));
  }
  CHECK(probs[0](1, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(probs[0](1, 1) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(probs[0](1, 2) == 0.0);
}

TEST_CASE("two-query three-key attention matches the hand-computed result") {
  ModelConfig cfg = tiny_cfg(VariantKind::MA);
  cfg.d_model = 4;
  cfg.d_k = 4;
  cfg.num_heads = 1;
  cfg.ffn_dim = 8;
  cfg.embedding_dim = 4;
  cfg.validate();
  std::mt19937_64 rng(9);
  Model<double> model = init_model<double>(cfg, rng);
  Tape<double> t;
  BoundModel<double> bm = bind_model(t, model, false);
  MatD q(2, 4), kv(3, 4);
  q << 0.3, -1.2, 0.8, 0.1, 1.0, 0.5, -0.4, 2.0;
  kv << 0.2, 0.9, -0.7, 0.4, -1.1, 0.3, 0.6, -0.2, 0.5, -0.5, 1.2, 0.8;
  BoolMat mask(2, 3);
  mask.setConstant(true);
  Var<double> out = multi_head_attention(t, bm, t.leaf(q, false),
                                         t.leaf(kv, false), mask, false, false,
                                         "", nullptr);
  MatD scores = q * kv.transpose() / 2.0;  // sqrt(d_k) == 2
  MatD expected(2, 3);
  for (int r = 0; r < 2; ++r) {
    Eigen::ArrayXd e = (scores.row(r).array() - scores.row(r).maxCoeff()).exp();
    expected.row(r) = (e / e.sum()).matrix();
  }
  MatD ref = expected * kv;
  CHECK((t.value(out) - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("intra rows keep zero cross-segment mass and cross rows the reverse") {
  ModelConfig cfg = tiny_cfg(VariantKind::DA);
  std::mt19937_64 rng(11);
  Model<float> model = init_model<float>(cfg, rng);
  std::mt19937_64 shapes(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int nx = 2 + static_cast<int>(shapes() % 4);
    const int ny = 2 + static_cast<int>(shapes() % 4);
    SegmentLayout lay;
    lay.n = nx + ny;
    lay.boundary = nx;
    lay.lang_x = 0;
    lay.lang_y = 1;
    lay.bos_pos = 0;
    lay.sep_pos = nx - 1;
    lay.eos_pos = lay.n - 1;
    lay.real.assign(static_cast<std::size_t>(lay.n), true);
    if (ny > 2) lay.real[static_cast<std::size_t>(lay.n - 2)] = false;
    lay.validate();
    std::vector<int> tokens(static_cast<std::size_t>(lay.n));
    tokens[0] = 1;
    tokens[static_cast<std::size_t>(lay.sep_pos)] = 3;
    tokens[static_cast<std::size_t>(lay.eos_pos)] = 2;
    for (int i = 0; i < lay.n; ++i) {
      if (!lay.is_special(i)) {
        tokens[static_cast<std::size_t>(i)] =
            5 + static_cast<int>(shapes() % 18);
      }
      if (!lay.real[static_cast<std::size_t>(i)]) {
        tokens[static_cast<std::size_t>(i)] = 0;
      }
    }
    Tape<float> t;
    BoundModel<float> bm = bind_model(t, model, false);
    std::vector<AttentionRecord> records;
    ForwardOptions opts;
    opts.records = &records;
    encoder_forward(t, bm, tokens, lay, opts);
    REQUIRE(records.size() == 2 * static_cast<std::size_t>(cfg.num_layers));
    for (const AttentionRecord& rec : records) {
      for (const MatD& head : rec.head_probs) {
        for (int r = 0; r < lay.n; ++r) {
          double own = 0.0, other = 0.0, total = 0.0;
          for (int c = 0; c < lay.n; ++c) {
            total += head(r, c);
            (lay.segment_of(c) == lay.segment_of(r) ? own : other) +=
                head(r, c);
          }
          CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
          if (rec.tag == AttnTag::IA) CHECK(other == 0.0);
          if (rec.tag == AttnTag::CA) CHECK(own == 0.0);
        }
      }
    }
  }
}

TEST_CASE("monolingual rows run the same ops in full and intra-only modes") {
  ModelConfig cfg = tiny_cfg(VariantKind::DA);
  std::mt19937_64 rng(17);
  Model<float> model = init_model<float>(cfg, rng);
  SegmentLayout lay = mono_layout(6, 1);
  std::vector<int> tokens{1, 14, 15, 16, 17, 2};

  Tape<float> t1;
  ForwardOptions full;
  full.mode = ForwardMode::full;
  MatF a = t1.value(
      encoder_forward(t1, bind_model(t1, model, false), tokens, lay, full));

  Tape<float> t2;
  ForwardOptions ia_only;
  ia_only.mode = ForwardMode::ia_only;
  MatF b = t2.value(
      encoder_forward(t2, bind_model(t2, model, false), tokens, lay, ia_only));
  CHECK(bit_identical(a, b));
}

TEST_CASE("second-segment edits cannot reach intra-only first-segment rows") {
  ModelConfig cfg = tiny_cfg(VariantKind::DA);
  std::mt19937_64 rng(19);
  Model<float> model = init_model<float>(cfg, rng);
  SegmentLayout lay = bilingual_layout();
  std::vector<int> tokens = bilingual_tokens();
  std::vector<int> edited = tokens;
  edited[4] = 20;
  edited[5] = 21;
  edited[6] = 22;

  ForwardOptions ia_only;
  ia_only.mode = ForwardMode::ia_only;
  Tape<float> t1;
  MatF a = t1.value(
      encoder_forward(t1, bind_model(t1, model, false), tokens, lay, ia_only));
  Tape<float> t2;
  MatF b = t2.value(
      encoder_forward(t2, bind_model(t2, model, false), edited, lay, ia_only));
  for (int r = 0; r < lay.boundary; ++r) {
    CHECK(bit_identical(MatF(a.row(r)), MatF(b.row(r))));
  }
  CHECK_FALSE(bit_identical(MatF(a.row(5)), MatF(b.row(5))));
}

TEST_CASE("cross attention without projections matches a hand oracle") {
  ModelConfig cfg;
  cfg.vocab_size = 13;
  cfg.d_model = 4;
  cfg.d_k = 4;
  cfg.num_heads = 1;
  cfg.num_layers = 1;
  cfg.ffn_dim = 8;
  cfg.max_positions = 8;
  cfg.num_languages = 2;
  cfg.embedding_dim = 4;
  cfg.variant.kind = VariantKind::DA;
  cfg.variant.ca_projection = CaProjection::none;
  cfg.variant.ca_ffn_shared = false;
  cfg.variant.ca_layernorm_shared = false;
  cfg.validate();
  std::mt19937_64 rng(23);
  Model<double> model = init_model<double>(cfg, rng);

  SegmentLayout lay;
  lay.n = 4;
  lay.boundary = 2;
  lay.lang_x = 0;
  lay.lang_y = 1;
  lay.real.assign(4, true);
  lay.validate();
  std::vector<int> tokens{5, 6, 9, 10};

  Tape<double> t;
  ForwardOptions full;
  MatD out = t.value(
      encoder_forward(t, bind_model(t, model, false), tokens, lay, full));
  Tape<double> ti;
  ForwardOptions ia_mode;
  ia_mode.mode = ForwardMode::ia_only;
  MatD h = ti.value(
      encoder_forward(ti, bind_model(ti, model, false), tokens, lay, ia_mode));

  // By hand: probs = softmax(h hᵀ / √d) restricted to the other segment,
  // attended value = probs·h, then the cross block's own LN/FFN stack.
  MatD scores = h * h.transpose() / 2.0;
  MatD probs = MatD::Zero(4, 4);
  for (int r = 0; r < 4; ++r) {
    const int lo = r < 2 ? 2 : 0;
    Eigen::Array2d z{scores(r, lo), scores(r, lo + 1)};
    Eigen::Array2d e = (z - z.maxCoeff()).exp();
    probs(r, lo) = e(0) / e.sum();
    probs(r, lo + 1) = e(1) / e.sum();
  }
  MatD ca = probs * h;
  MatD h3 = ln_ref(h + ca, model.params.at("layer00.ca.ln1.gain"),
                   model.params.at("layer00.ca.ln1.bias"), cfg.ln_eps);
  MatD f = ffn_ref(h3, model.params.at("layer00.ca.ffn.w1"),
                   model.params.at("layer00.ca.ffn.b1"),
                   model.params.at("layer00.ca.ffn.w2"),
                   model.params.at("layer00.ca.ffn.b2"));
  MatD ref = ln_ref(h3 + f, model.params.at("layer00.ca.ln2.gain"),
                    model.params.at("layer00.ca.ln2.bias"), cfg.ln_eps);
  CHECK((out - ref).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("cross sublayers sit only in the configured top layers") {
  ModelConfig cfg = tiny_cfg(VariantKind::DA);
  cfg.num_layers = 3;
  cfg.ca_top_k_layers = 1;
  cfg.validate();
  std::mt19937_64 rng(29);
  Model<float> model = init_model<float>(cfg, rng);
  SegmentLayout lay = bilingual_layout();
  Tape<float> t;
  std::vector<AttentionRecord> records;
  ForwardOptions opts;
  opts.records = &records;
  encoder_forward(t, bind_model(t, model, false), bilingual_tokens(), lay, opts);
  int ca_count = 0;
  for (const AttentionRecord& rec : records) {
    if (rec.tag == AttnTag::CA) {
      ++ca_count;
      CHECK(rec.layer == 2);
    }
  }
  CHECK(ca_count == 1);
  // The lower layers carry no cross parameters either.
  for (const auto& shape : param_shapes(cfg)) {
    if (shape.name.find(".ca.") != std::string::npos) {
      CHECK(shape.name.substr(0, 7) == "layer02");
    }
  }
}

TEST_CASE("tied head projects through the embedding table") {
  ModelConfig cfg = tiny_cfg(VariantKind::MA);
  for (const auto& shape : param_shapes(cfg)) {
    CHECK(shape.name.rfind("lm.", 0) != 0);  // tied: no separate head weight
  }
  std::mt19937_64 rng(31);
  Model<float> model = init_model<float>(cfg, rng);
  SegmentLayout lay = bilingual_layout();
  Tape<float> t;
  BoundModel<float> bm = bind_model(t, model, false);
  Var<float> h = encoder_forward(t, bm, bilingual_tokens(), lay, {});
  Var<float> logits = lm_head(t, bm, h);
  CHECK(t.rows(logits) == lay.n);
  CHECK(t.cols(logits) == cfg.vocab_size);
  Var<float> p = softmax_lastdim(t, logits, 1.0f);
  for (int r = 0; r < lay.n; ++r) {
    CHECK(t.value(p).row(r).sum() == doctest::Approx(1.0f).epsilon(1e-6));
  }

  ModelConfig untied = cfg;
  untied.tie_lm_head = false;
  bool found = false;
  for (const auto& shape : param_shapes(untied)) {
    if (shape.name == "lm.w") found = true;
  }
  CHECK(found);
  CHECK(count_parameters(untied).total ==
        count_parameters(cfg).total +
            static_cast<long long>(cfg.d_model) * cfg.vocab_size);
}

TEST_CASE("forwards and records are deterministic per seed") {
  ModelConfig cfg = tiny_cfg(VariantKind::DA);
  std::mt19937_64 rng_a(37), rng_b(37);
  Model<float> a = init_model<float>(cfg, rng_a);
  Model<float> b = init_model<float>(cfg, rng_b);
  for (const auto& [name, m] : a.params) {
    CHECK(bit_identical(m, b.params.at(name)));
  }
  SegmentLayout lay = bilingual_layout();
  std::vector<AttentionRecord> rec_a, rec_b;
  Tape<float> t1, t2;
  ForwardOptions o1, o2;
  o1.records = &rec_a;
  o2.records = &rec_b;
  MatF out_a = t1.value(
      encoder_forward(t1, bind_model(t1, a, false), bilingual_tokens(), lay, o1));
  MatF out_b = t2.value(
      encoder_forward(t2, bind_model(t2, b, false), bilingual_tokens(), lay, o2));
  CHECK(bit_identical(out_a, out_b));
  REQUIRE(rec_a.size() == rec_b.size());
  for (std::size_t i = 0; i < rec_a.size(); ++i) {
    REQUIRE(rec_a[i].head_probs.size() == rec_b[i].head_probs.size());
    for (std::size_t hd = 0; hd < rec_a[i].head_probs.size(); ++hd) {
      CHECK(rec_a[i].head_probs[hd] == rec_b[i].head_probs[hd]);
    }
  }
}

TEST_CASE("a small decomposed stack differentiates end to end") {
  ModelConfig cfg;
  cfg.vocab_size = 13;
  cfg.d_model = 4;
  cfg.d_k = 2;
  cfg.num_heads = 2;
  cfg.num_layers = 1;
  cfg.ffn_dim = 8;
  cfg.max_positions = 8;
  cfg.num_languages = 2;
  cfg.embedding_dim = 4;
  cfg.variant = variant_da();
  cfg.validate();
  std::mt19937_64 rng(41);
  Model<double> model = init_model<double>(cfg, rng);

  SegmentLayout lay;
  lay.n = 6;
  lay.boundary = 3;
  lay.lang_x = 0;
  lay.lang_y = 1;
  lay.bos_pos = 0;
  lay.sep_pos = 2;
  lay.eos_pos = 5;
  lay.real.assign(6, true);
  lay.validate();
  std::vector<int> tokens{1, 7, 3, 10, 11, 2};
  std::vector<int> targets{-1, 8, -1, -1, 12, -1};

  double err = finite_diff_check_params(
      [&](Tape<double>& t, std::map<std::string, Var<double>>& vars) {
        BoundModel<double> bm;
        bm.cfg = &cfg;
        bm.vars = vars;
        Var<double> h = encoder_forward(t, bm, tokens, lay, {});
        return cross_entropy_logits(t, lm_head(t, bm, h), targets, -1).mean;
      },
      model.params, 1e-5);
  CHECK(err < 1e-4);
}
