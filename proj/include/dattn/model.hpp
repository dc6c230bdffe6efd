#pragma once

#include <cstdio>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dattn/config.hpp"
#include "dattn/layout.hpp"
#include "dattn/ops.hpp"

namespace dattn {

enum class AttnTag { IA, CA, MA };

inline std::string to_string(AttnTag tag) {
  switch (tag) {
    case AttnTag::IA: return "ia";
    case AttnTag::CA: return "ca";
    case AttnTag::MA: return "ma";
  }
  return "?";
}

/// One attention application: every head's full n×n probability matrix plus
/// the layout it was computed under. Probabilities are stored at 64-bit
/// regardless of the model scalar.
struct AttentionRecord {
  int layer = 0;
  AttnTag tag = AttnTag::MA;
  SegmentLayout layout;
  std::vector<MatD> head_probs;

  MatD head_average() const {
    if (head_probs.empty()) throw DataError("attention record has no heads");
    MatD avg = head_probs[0];
    for (std::size_t h = 1; h < head_probs.size(); ++h) avg += head_probs[h];
    avg /= static_cast<double>(head_probs.size());
    return avg;
  }
};

/// Persistent model: config plus named parameter matrices. The parameter set
/// is exactly param_shapes(cfg); the map keeps a stable iteration order.
template <class S>
struct Model {
  ModelConfig cfg;
  std::map<std::string, Mat<S>> params;
};

/// Fresh parameters: weights and embeddings N(0, 0.02), layer-norm gains 1,
/// all biases 0. Draw order follows param_shapes, row-major per tensor.
template <class S>
Model<S> init_model(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  Model<S> model;
  model.cfg = cfg;
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const ParamShape& shape : param_shapes(cfg)) {
    Mat<S> m(shape.rows, shape.cols);
    // The final name component decides: gains start at one, biases at zero,
    // everything else (weights, embedding tables) draws from the normal.
    const std::string leaf = shape.name.substr(shape.name.rfind('.') + 1);
    if (leaf == "gain") {
      m.setOnes();
    } else if (!leaf.empty() && leaf[0] == 'b') {
      m.setZero();
    } else {
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          m(r, c) = static_cast<S>(normal(rng));
        }
      }
    }
    model.params.emplace(shape.name, std::move(m));
  }
  return model;
}

/// A model registered on one tape: every parameter is a leaf Var. Holds the
/// shared 1-vector/0-vector used when layer norm has no affine parameters.
template <class S>
struct BoundModel {
  const ModelConfig* cfg = nullptr;
  std::map<std::string, Var<S>> vars;
  Var<S> unit_gain;  // 1×d_model of ones, constant
  Var<S> zero_bias;  // 1×d_model of zeros, constant

  Var<S> at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) {
      throw ConfigError("model has no parameter named '" + name + "'");
    }
    return it->second;
  }
  bool has(const std::string& name) const { return vars.count(name) != 0; }
};

template <class S>
BoundModel<S> bind_model(Tape<S>& t, const Model<S>& model,
                         bool requires_grad) {
  BoundModel<S> bound;
  bound.cfg = &model.cfg;
  for (const auto& [name, value] : model.params) {
    bound.vars.emplace(name, t.leaf(value, requires_grad));
  }
  if (!model.cfg.ln_affine) {
    bound.unit_gain = t.constant(Mat<S>::Ones(1, model.cfg.d_model));
    bound.zero_bias = t.constant(Mat<S>::Zero(1, model.cfg.d_model));
  }
  return bound;
}

enum class ForwardMode { full, ia_only };

struct ForwardOptions {
  ForwardMode mode = ForwardMode::full;
  bool training = false;
  std::mt19937_64* dropout_rng = nullptr;
  std::vector<AttentionRecord>* records = nullptr;  // optional capture
};

namespace detail {

template <class S>
Var<S> maybe_dropout(Tape<S>& t, Var<S> x, const ModelConfig& cfg,
                     const ForwardOptions& opts) {
  if (!opts.training || cfg.dropout_p == 0.0) return x;
  if (opts.dropout_rng == nullptr) {
    throw ConfigError("training forward with dropout needs a dropout rng");
  }
  return dropout(t, x, cfg.dropout_p, *opts.dropout_rng, /*training=*/true);
}

template <class S>
Var<S> apply_layer_norm(Tape<S>& t, const BoundModel<S>& bm, Var<S> x,
                        const std::string& prefix) {
  const ModelConfig& cfg = *bm.cfg;
  Var<S> gain = cfg.ln_affine ? bm.at(prefix + ".gain") : bm.unit_gain;
  Var<S> bias = cfg.ln_affine ? bm.at(prefix + ".bias") : bm.zero_bias;
  return layer_norm(t, x, gain, bias, static_cast<S>(cfg.ln_eps));
}

template <class S>
Var<S> apply_ffn(Tape<S>& t, const BoundModel<S>& bm, Var<S> x,
                 const std::string& prefix) {
  const ModelConfig& cfg = *bm.cfg;
  Var<S> b1 = cfg.use_bias ? bm.at(prefix + ".b1") : Var<S>{};
  Var<S> b2 = cfg.use_bias ? bm.at(prefix + ".b2") : Var<S>{};
  Var<S> h = linear(t, x, bm.at(prefix + ".w1"), b1);
  h = gelu(t, h, cfg.gelu_tanh);
  return linear(t, h, bm.at(prefix + ".w2"), b2);
}

}  // namespace detail

/// Scaled dot-product attention over unmasked keys, several heads wide.
/// q_in/kv_in are n×d_model; heads are contiguous d_k column blocks. Without
/// Q/K/V projections the inputs are used directly. Per-head probabilities are
/// appended to head_probs_out when given.
template <class S>
Var<S> multi_head_attention(Tape<S>& t, const BoundModel<S>& bm, Var<S> q_in,
                            Var<S> kv_in, const BoolMat& mask,
                            bool use_qkv_proj, bool use_out_proj,
                            const std::string& prefix,
                            std::vector<MatD>* head_probs_out) {
  const ModelConfig& cfg = *bm.cfg;
  const bool bias = cfg.use_bias;
  Var<S> q = q_in, k = kv_in, v = kv_in;
  if (use_qkv_proj) {
    q = linear(t, q_in, bm.at(prefix + ".wq"),
               bias ? bm.at(prefix + ".bq") : Var<S>{});
    k = linear(t, kv_in, bm.at(prefix + ".wk"),
               bias ? bm.at(prefix + ".bk") : Var<S>{});
    v = linear(t, kv_in, bm.at(prefix + ".wv"),
               bias ? bm.at(prefix + ".bv") : Var<S>{});
  }
  const S inv_sqrt_dk = S(1) / std::sqrt(static_cast<S>(cfg.d_k));
  std::vector<Var<S>> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(cfg.num_heads));
  for (int h = 0; h < cfg.num_heads; ++h) {
    Var<S> qh = cols_slice(t, q, static_cast<Eigen::Index>(h) * cfg.d_k, cfg.d_k);
    Var<S> kh = cols_slice(t, k, static_cast<Eigen::Index>(h) * cfg.d_k, cfg.d_k);
    Var<S> vh = cols_slice(t, v, static_cast<Eigen::Index>(h) * cfg.d_k, cfg.d_k);
    Var<S> scores = matmul_nt(t, qh, kh);
    Var<S> probs = masked_softmax(t, scores, mask, inv_sqrt_dk);
    if (head_probs_out) {
      head_probs_out->push_back(t.value(probs).template cast<double>());
    }
    head_outputs.push_back(matmul(t, probs, vh));
  }
  Var<S> concat = cols_concat(t, head_outputs);
  if (!use_out_proj) return concat;
  return linear(t, concat, bm.at(prefix + ".wo"),
                bias ? bm.at(prefix + ".bo") : Var<S>{});
}

/// One mixed-attention layer: full self-attention over real tokens, then the
/// usual post-norm residual blocks.
template <class S>
Var<S> ma_layer(Tape<S>& t, const BoundModel<S>& bm, Var<S> h,
                const SegmentLayout& lay, int layer,
                const ForwardOptions& opts) {
  const std::string base = [layer] {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "layer%02d", layer);
    return std::string(buf);
  }();
  BoolMat mask = full_attention_mask(lay);
  std::vector<MatD> probs;
  Var<S> a = multi_head_attention(t, bm, h, h, mask, /*use_qkv_proj=*/true,
                                  /*use_out_proj=*/true, base + ".ia.attn",
                                  opts.records ? &probs : nullptr);
  if (opts.records) {
    opts.records->push_back({layer, AttnTag::MA, lay, std::move(probs)});
  }
  Var<S> h1 = detail::apply_layer_norm(
      t, bm, add(t, h, detail::maybe_dropout(t, a, *bm.cfg, opts)),
      base + ".ia.ln1");
  Var<S> f = detail::apply_ffn(t, bm, h1, base + ".ia.ffn");
  return detail::apply_layer_norm(
      t, bm, add(t, h1, detail::maybe_dropout(t, f, *bm.cfg, opts)),
      base + ".ia.ln2");
}

/// One decomposed layer: the intra-lingual sublayer always runs; the
/// cross-lingual sublayer runs only in full mode on bilingual rows and for
/// layers configured to carry it. The CA residual source is the IA output.
template <class S>
Var<S> da_layer(Tape<S>& t, const BoundModel<S>& bm, Var<S> h,
                const SegmentLayout& lay, int layer,
                const ForwardOptions& opts) {
  const ModelConfig& cfg = *bm.cfg;
  const std::string base = [layer] {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "layer%02d", layer);
    return std::string(buf);
  }();

  BoolMat ia_mask = intra_segment_mask(lay);
  std::vector<MatD> ia_probs;
  Var<S> a = multi_head_attention(t, bm, h, h, ia_mask, /*use_qkv_proj=*/true,
                                  /*use_out_proj=*/true, base + ".ia.attn",
                                  opts.records ? &ia_probs : nullptr);
  if (opts.records) {
    opts.records->push_back({layer, AttnTag::IA, lay, std::move(ia_probs)});
  }
  Var<S> h1 = detail::apply_layer_norm(
      t, bm, add(t, h, detail::maybe_dropout(t, a, cfg, opts)),
      base + ".ia.ln1");
  Var<S> f = detail::apply_ffn(t, bm, h1, base + ".ia.ffn");
  Var<S> ia_out = detail::apply_layer_norm(
      t, bm, add(t, h1, detail::maybe_dropout(t, f, cfg, opts)),
      base + ".ia.ln2");

  const bool run_ca = opts.mode == ForwardMode::full && !lay.mono() &&
                      cfg.layer_has_ca(layer);
  if (!run_ca) return ia_out;

  BoolMat ca_mask = cross_segment_mask(lay);
  const bool qkv = cfg.variant.ca_projection == CaProjection::full;
  const bool outp = cfg.variant.ca_projection != CaProjection::none;
  std::vector<MatD> ca_probs;
  Var<S> c = multi_head_attention(t, bm, ia_out, ia_out, ca_mask, qkv, outp,
                                  base + ".ca.attn",
                                  opts.records ? &ca_probs : nullptr);
  if (opts.records) {
    opts.records->push_back({layer, AttnTag::CA, lay, std::move(ca_probs)});
  }
  const std::string ln1 =
      cfg.variant.ca_layernorm_shared ? base + ".ia.ln1" : base + ".ca.ln1";
  const std::string ln2 =
      cfg.variant.ca_layernorm_shared ? base + ".ia.ln2" : base + ".ca.ln2";
  const std::string ffn =
      cfg.variant.ca_ffn_shared ? base + ".ia.ffn" : base + ".ca.ffn";
  Var<S> h3 = detail::apply_layer_norm(
      t, bm, add(t, ia_out, detail::maybe_dropout(t, c, cfg, opts)), ln1);
  Var<S> g = detail::apply_ffn(t, bm, h3, ffn);
  return detail::apply_layer_norm(
      t, bm, add(t, h3, detail::maybe_dropout(t, g, cfg, opts)), ln2);
}

/// Token + positional + language embeddings summed, shape n×embedding_dim.
template <class S>
Var<S> embed(Tape<S>& t, const BoundModel<S>& bm, const std::vector<int>& tokens,
             const SegmentLayout& lay) {
  const ModelConfig& cfg = *bm.cfg;
  lay.validate();
  if (static_cast<int>(tokens.size()) != lay.n) {
    throw ShapeError("embed: " + std::to_string(tokens.size()) +
                     " tokens for layout of length " + std::to_string(lay.n));
  }
  Var<S> x = rows_gather(t, bm.at("embed.tok"), tokens);
  if (cfg.max_positions > 0) {
    if (lay.n > cfg.max_positions) {
      throw IndexError("embed: sequence length " + std::to_string(lay.n) +
                       " exceeds max_positions " +
                       std::to_string(cfg.max_positions));
    }
    std::vector<int> positions(static_cast<std::size_t>(lay.n));
    for (int i = 0; i < lay.n; ++i) positions[static_cast<std::size_t>(i)] = i;
    x = add(t, x, rows_gather(t, bm.at("embed.pos"), positions));
  }
  if (cfg.num_languages > 0) {
    std::vector<int> langs(static_cast<std::size_t>(lay.n));
    for (int i = 0; i < lay.n; ++i) {
      langs[static_cast<std::size_t>(i)] =
          lay.segment_of(i) == 0 ? lay.lang_x : lay.lang_y;
    }
    x = add(t, x, rows_gather(t, bm.at("embed.lang"), langs));
  }
  return x;
}

/// Full encoder pass. Returns the last layer's hidden states; per-layer
/// attention records are appended to opts.records when set.
template <class S>
Var<S> encoder_forward(Tape<S>& t, const BoundModel<S>& bm,
                       const std::vector<int>& tokens, const SegmentLayout& lay,
                       const ForwardOptions& opts) {
  const ModelConfig& cfg = *bm.cfg;
  Var<S> h = embed(t, bm, tokens, lay);
  h = detail::maybe_dropout(t, h, cfg, opts);
  if (cfg.has_embed_projection()) {
    h = matmul(t, h, bm.at("embed.proj"));
  }
  for (int l = 0; l < cfg.num_layers; ++l) {
    if (cfg.variant.decomposed()) {
      h = da_layer(t, bm, h, lay, l, opts);
    } else {
      h = ma_layer(t, bm, h, lay, l, opts);
    }
  }
  return h;
}

/// Vocabulary logits from hidden states. With weight tying the token table
/// (and the embedding projection, when present) is reused transposed.
template <class S>
Var<S> lm_head(Tape<S>& t, const BoundModel<S>& bm, Var<S> hidden) {
  const ModelConfig& cfg = *bm.cfg;
  Var<S> logits;
  if (cfg.tie_lm_head) {
    Var<S> h = hidden;
    if (cfg.has_embed_projection()) {
      h = matmul_nt(t, h, bm.at("embed.proj"));  // d_model -> embedding_dim
    }
    logits = matmul_nt(t, h, bm.at("embed.tok"));
  } else {
    logits = matmul(t, hidden, bm.at("lm.w"));
  }
  if (cfg.lm_bias) logits = add_rowvec(t, logits, bm.at("lm.b"));
  return logits;
}

}  // namespace dattn
