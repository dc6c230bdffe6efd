#include "dattn/config.hpp"

#include <cstdio>
#include <map>
#include <sstream>

namespace dattn {

std::string to_string(VariantKind k) {
  switch (k) {
    case VariantKind::MA: return "ma";
    case VariantKind::DA: return "da";
    case VariantKind::DA_REDUCE: return "da_reduce";
    case VariantKind::DA_SHARE: return "da_share";
  }
  throw ConfigError("unknown variant kind");
}

std::string to_string(CaProjection p) {
  switch (p) {
    case CaProjection::none: return "none";
    case CaProjection::output_only: return "output_only";
    case CaProjection::full: return "full";
  }
  throw ConfigError("unknown ca projection");
}

VariantKind variant_kind_from_string(const std::string& s) {
  if (s == "ma") return VariantKind::MA;
  if (s == "da") return VariantKind::DA;
  if (s == "da_reduce") return VariantKind::DA_REDUCE;
  if (s == "da_share") return VariantKind::DA_SHARE;
  throw ConfigError("unknown variant kind '" + s + "'");
}

CaProjection ca_projection_from_string(const std::string& s) {
  if (s == "none") return CaProjection::none;
  if (s == "output_only") return CaProjection::output_only;
  if (s == "full") return CaProjection::full;
  throw ConfigError("unknown ca projection '" + s + "'");
}

EncoderVariant variant_ma() { return EncoderVariant{VariantKind::MA}; }

EncoderVariant variant_da() {
  EncoderVariant v;
  v.kind = VariantKind::DA;
  v.ca_projection = CaProjection::output_only;
  v.ca_ffn_shared = false;
  v.ca_layernorm_shared = false;
  return v;
}

EncoderVariant variant_da_reduce() {
  EncoderVariant v = variant_da();
  v.kind = VariantKind::DA_REDUCE;
  return v;
}

EncoderVariant variant_da_share() {
  EncoderVariant v;
  v.kind = VariantKind::DA_SHARE;
  v.ca_projection = CaProjection::none;
  v.ca_ffn_shared = true;
  v.ca_layernorm_shared = true;
  return v;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) {
      throw ConfigError(std::string(name) + " must be positive, got " +
                        std::to_string(v));
    }
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(d_k, "d_k");
  positive(num_heads, "num_heads");
  positive(num_layers, "num_layers");
  positive(ffn_dim, "ffn_dim");
  positive(embedding_dim, "embedding_dim");
  if (max_positions < 0) throw ConfigError("max_positions must be >= 0");
  if (num_languages < 0) throw ConfigError("num_languages must be >= 0");
  if (num_heads * d_k != d_model) {
    throw ConfigError("num_heads * d_k must equal d_model (" +
                      std::to_string(num_heads) + " * " + std::to_string(d_k) +
                      " != " + std::to_string(d_model) + ")");
  }
  if (variant.kind == VariantKind::DA_REDUCE) {
    if (embedding_dim <= d_model) {
      throw ConfigError(
          "da_reduce requires embedding_dim > d_model, got embedding_dim=" +
          std::to_string(embedding_dim) + " d_model=" + std::to_string(d_model));
    }
  } else if (embedding_dim != d_model) {
    throw ConfigError("embedding_dim must equal d_model for variant " +
                      to_string(variant.kind));
  }
  if (variant.kind == VariantKind::DA_SHARE) {
    if (!variant.ca_ffn_shared || !variant.ca_layernorm_shared ||
        variant.ca_projection != CaProjection::none) {
      throw ConfigError(
          "da_share requires shared FFN and layer norm and no CA projection");
    }
  }
  if (ca_top_k_layers < 0 || ca_top_k_layers > num_layers) {
    throw ConfigError("ca_top_k_layers must lie in [0, num_layers], got " +
                      std::to_string(ca_top_k_layers));
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw ConfigError("dropout_p must lie in [0, 1), got " +
                      std::to_string(dropout_p));
  }
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
}

bool ModelConfig::layer_has_ca(int layer) const {
  if (!variant.decomposed()) return false;
  if (layer < 0 || layer >= num_layers) {
    throw ConfigError("layer index " + std::to_string(layer) +
                      " outside [0, " + std::to_string(num_layers) + ")");
  }
  if (ca_top_k_layers == 0) return true;
  return layer >= num_layers - ca_top_k_layers;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string ModelConfig::serialize() const {
  std::ostringstream out;
  out << "vocab_size=" << vocab_size << "\n";
  out << "d_model=" << d_model << "\n";
  out << "d_k=" << d_k << "\n";
  out << "num_heads=" << num_heads << "\n";
  out << "num_layers=" << num_layers << "\n";
  out << "ffn_dim=" << ffn_dim << "\n";
  out << "max_positions=" << max_positions << "\n";
  out << "num_languages=" << num_languages << "\n";
  out << "embedding_dim=" << embedding_dim << "\n";
  out << "ca_top_k_layers=" << ca_top_k_layers << "\n";
  out << "dropout_p=" << fmt_double(dropout_p) << "\n";
  out << "ln_eps=" << fmt_double(ln_eps) << "\n";
  out << "use_bias=" << (use_bias ? 1 : 0) << "\n";
  out << "ln_affine=" << (ln_affine ? 1 : 0) << "\n";
  out << "tie_lm_head=" << (tie_lm_head ? 1 : 0) << "\n";
  out << "lm_bias=" << (lm_bias ? 1 : 0) << "\n";
  out << "gelu_tanh=" << (gelu_tanh ? 1 : 0) << "\n";
  out << "variant=" << to_string(variant.kind) << "\n";
  out << "ca_projection=" << to_string(variant.ca_projection) << "\n";
  out << "ca_ffn_shared=" << (variant.ca_ffn_shared ? 1 : 0) << "\n";
  out << "ca_layernorm_shared=" << (variant.ca_layernorm_shared ? 1 : 0)
      << "\n";
  return out.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("model config line " + std::to_string(line_no) +
                        " is not key=value: '" + line + "'");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw ConfigError(std::string("model config missing key '") + key + "'");
    }
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_int = [&](const char* key) { return std::stoi(take(key)); };
  auto take_double = [&](const char* key) { return std::stod(take(key)); };
  auto take_bool = [&](const char* key) { return take_int(key) != 0; };

  ModelConfig cfg;
  cfg.vocab_size = take_int("vocab_size");
  cfg.d_model = take_int("d_model");
  cfg.d_k = take_int("d_k");
  cfg.num_heads = take_int("num_heads");
  cfg.num_layers = take_int("num_layers");
  cfg.ffn_dim = take_int("ffn_dim");
  cfg.max_positions = take_int("max_positions");
  cfg.num_languages = take_int("num_languages");
  cfg.embedding_dim = take_int("embedding_dim");
  cfg.ca_top_k_layers = take_int("ca_top_k_layers");
  cfg.dropout_p = take_double("dropout_p");
  cfg.ln_eps = take_double("ln_eps");
  cfg.use_bias = take_bool("use_bias");
  cfg.ln_affine = take_bool("ln_affine");
  cfg.tie_lm_head = take_bool("tie_lm_head");
  cfg.lm_bias = take_bool("lm_bias");
  cfg.gelu_tanh = take_bool("gelu_tanh");
  cfg.variant.kind = variant_kind_from_string(take("variant"));
  cfg.variant.ca_projection = ca_projection_from_string(take("ca_projection"));
  cfg.variant.ca_ffn_shared = take_bool("ca_ffn_shared");
  cfg.variant.ca_layernorm_shared = take_bool("ca_layernorm_shared");
  if (!kv.empty()) {
    throw ConfigError("model config has unknown key '" + kv.begin()->first +
                      "'");
  }
  cfg.validate();
  return cfg;
}

ModelConfig desk_config(VariantKind kind) {
  ModelConfig cfg;
  cfg.vocab_size = 293;  // 5 specials + 3 languages x 96 lexicon entries
  cfg.num_heads = 4;
  cfg.num_layers = 2;
  cfg.max_positions = 64;
  cfg.num_languages = 3;
  cfg.dropout_p = 0.1;
  switch (kind) {
    case VariantKind::MA:
      cfg.variant = variant_ma();
      cfg.d_model = 64;
      cfg.d_k = 16;
      cfg.ffn_dim = 256;
      cfg.embedding_dim = 64;
      break;
    case VariantKind::DA:
      cfg.variant = variant_da();
      cfg.d_model = 64;
      cfg.d_k = 16;
      cfg.ffn_dim = 256;
      cfg.embedding_dim = 64;
      break;
    case VariantKind::DA_REDUCE:
      cfg.variant = variant_da_reduce();
      cfg.d_model = 56;
      cfg.d_k = 14;
      cfg.ffn_dim = 224;
      cfg.embedding_dim = 64;
      break;
    case VariantKind::DA_SHARE:
      cfg.variant = variant_da_share();
      cfg.d_model = 64;
      cfg.d_k = 16;
      cfg.ffn_dim = 256;
      cfg.embedding_dim = 64;
      break;
  }
  cfg.validate();
  return cfg;
}

ModelConfig full_scale_config(VariantKind kind) {
  ModelConfig cfg;
  cfg.vocab_size = 119547;
  cfg.num_heads = 12;
  cfg.num_layers = 12;
  cfg.max_positions = 512;
  cfg.num_languages = 0;
  cfg.dropout_p = 0.1;
  cfg.d_model = 768;
  cfg.d_k = 64;
  cfg.ffn_dim = 3072;
  cfg.embedding_dim = 768;
  switch (kind) {
    case VariantKind::MA:
      cfg.variant = variant_ma();
      break;
    case VariantKind::DA:
      cfg.variant = variant_da();
      break;
    case VariantKind::DA_REDUCE:
      cfg.variant = variant_da_reduce();
      cfg.d_model = 720;  // reduced hidden width, embeddings stay 768-wide
      cfg.d_k = 60;
      break;
    case VariantKind::DA_SHARE:
      cfg.variant = variant_da_share();
      break;
  }
  cfg.validate();
  return cfg;
}

namespace {

std::string layer_prefix(int layer) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "layer%02d", layer);
  return buf;
}

}  // namespace

std::vector<ParamShape> param_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamShape> shapes;
  auto push = [&](std::string name, Eigen::Index r, Eigen::Index c) {
    shapes.push_back({std::move(name), r, c});
  };
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index e = cfg.embedding_dim;
  const Eigen::Index f = cfg.ffn_dim;

  push("embed.tok", cfg.vocab_size, e);
  if (cfg.max_positions > 0) push("embed.pos", cfg.max_positions, e);
  if (cfg.num_languages > 0) push("embed.lang", cfg.num_languages, e);
  if (cfg.has_embed_projection()) push("embed.proj", e, d);

  auto push_ln = [&](const std::string& prefix) {
    if (!cfg.ln_affine) return;
    push(prefix + ".gain", 1, d);
    push(prefix + ".bias", 1, d);
  };
  auto push_ffn = [&](const std::string& prefix) {
    push(prefix + ".w1", d, f);
    if (cfg.use_bias) push(prefix + ".b1", 1, f);
    push(prefix + ".w2", f, d);
    if (cfg.use_bias) push(prefix + ".b2", 1, d);
  };

  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string ia = layer_prefix(l) + ".ia";
    push(ia + ".attn.wq", d, d);
    if (cfg.use_bias) push(ia + ".attn.bq", 1, d);
    push(ia + ".attn.wk", d, d);
    if (cfg.use_bias) push(ia + ".attn.bk", 1, d);
    push(ia + ".attn.wv", d, d);
    if (cfg.use_bias) push(ia + ".attn.bv", 1, d);
    push(ia + ".attn.wo", d, d);
    if (cfg.use_bias) push(ia + ".attn.bo", 1, d);
    push_ln(ia + ".ln1");
    push_ffn(ia + ".ffn");
    push_ln(ia + ".ln2");

    if (!cfg.layer_has_ca(l)) continue;
    const std::string ca = layer_prefix(l) + ".ca";
    if (cfg.variant.ca_projection == CaProjection::full) {
      push(ca + ".attn.wq", d, d);
      if (cfg.use_bias) push(ca + ".attn.bq", 1, d);
      push(ca + ".attn.wk", d, d);
      if (cfg.use_bias) push(ca + ".attn.bk", 1, d);
      push(ca + ".attn.wv", d, d);
      if (cfg.use_bias) push(ca + ".attn.bv", 1, d);
    }
    if (cfg.variant.ca_projection != CaProjection::none) {
      push(ca + ".attn.wo", d, d);
      if (cfg.use_bias) push(ca + ".attn.bo", 1, d);
    }
    if (!cfg.variant.ca_layernorm_shared) push_ln(ca + ".ln1");
    if (!cfg.variant.ca_ffn_shared) push_ffn(ca + ".ffn");
    if (!cfg.variant.ca_layernorm_shared) push_ln(ca + ".ln2");
  }

  if (!cfg.tie_lm_head) push("lm.w", d, cfg.vocab_size);
  if (cfg.lm_bias) push("lm.b", 1, cfg.vocab_size);
  return shapes;
}

ParameterReport count_parameters(const ModelConfig& cfg) {
  ParameterReport report;
  report.per_layer_ia.assign(static_cast<std::size_t>(cfg.num_layers), 0);
  report.per_layer_ca.assign(static_cast<std::size_t>(cfg.num_layers), 0);
  for (const ParamShape& s : param_shapes(cfg)) {
    long long n = static_cast<long long>(s.rows) * s.cols;
    report.total += n;
    if (s.name.rfind("embed.", 0) == 0) {
      report.embeddings += n;
    } else if (s.name.rfind("lm.", 0) == 0) {
      report.lm_head += n;
    } else {
      int layer = std::stoi(s.name.substr(5, 2));
      if (s.name.find(".ia.") != std::string::npos) {
        report.per_layer_ia[static_cast<std::size_t>(layer)] += n;
      } else {
        report.per_layer_ca[static_cast<std::size_t>(layer)] += n;
      }
    }
  }
  return report;
}

}  // namespace dattn
