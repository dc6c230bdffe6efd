#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "dattn/errors.hpp"

namespace dattn {

enum class VariantKind { MA, DA, DA_REDUCE, DA_SHARE };
enum class CaProjection { none, output_only, full };

std::string to_string(VariantKind k);
std::string to_string(CaProjection p);
VariantKind variant_kind_from_string(const std::string& s);
CaProjection ca_projection_from_string(const std::string& s);

/// Which attention decomposition a model uses and how the cross-lingual
/// sublayer is parameterized.
struct EncoderVariant {
  VariantKind kind = VariantKind::MA;
  CaProjection ca_projection = CaProjection::output_only;
  bool ca_ffn_shared = false;
  bool ca_layernorm_shared = false;

  bool decomposed() const { return kind != VariantKind::MA; }
};

EncoderVariant variant_ma();
EncoderVariant variant_da();
EncoderVariant variant_da_reduce();
EncoderVariant variant_da_share();

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int d_k = 0;
  int num_heads = 0;
  int num_layers = 0;
  int ffn_dim = 0;
  int max_positions = 0;   // 0 = no positional table
  int num_languages = 0;   // 0 = no language table
  int embedding_dim = 0;   // equals d_model except for DA_REDUCE
  int ca_top_k_layers = 0; // 0 = every layer has a CA sublayer; k>0 = top k only
  double dropout_p = 0.0;
  double ln_eps = 1e-5;
  bool use_bias = true;   // biases on linear projections
  bool ln_affine = true;  // layer-norm gain/bias parameters
  bool tie_lm_head = true;
  bool lm_bias = false;
  bool gelu_tanh = false;
  EncoderVariant variant;

  void validate() const;  // throws ConfigError with the violated rule
  bool layer_has_ca(int layer) const;
  bool has_embed_projection() const { return embedding_dim != d_model; }

  std::string serialize() const;
  static ModelConfig parse(const std::string& text);
};

/// Desk-scale preset used by the training CLI and the end-to-end studies.
ModelConfig desk_config(VariantKind kind);

/// Full-scale preset (768 hidden / 3072 FFN / 12 layers; the reduce variant
/// drops the hidden width to 720 and keeps 768-dim embeddings). Used only
/// for parameter accounting, never trained here.
ModelConfig full_scale_config(VariantKind kind);

struct ParamShape {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

/// The single source of truth for which trainable tensors a config owns:
/// initialization, counting, checkpointing, and the optimizer all iterate
/// this list. Names sort into a stable order (layers are zero-padded).
std::vector<ParamShape> param_shapes(const ModelConfig& cfg);

struct ParameterReport {
  long long total = 0;
  long long embeddings = 0;  // token/positional/language tables + embed projection
  long long lm_head = 0;
  std::vector<long long> per_layer_ia;
  std::vector<long long> per_layer_ca;
};

ParameterReport count_parameters(const ModelConfig& cfg);

}  // namespace dattn
