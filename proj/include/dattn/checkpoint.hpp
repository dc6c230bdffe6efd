#pragma once

#include <string>
#include <vector>

#include "dattn/model.hpp"
#include "dattn/objectives.hpp"
#include "dattn/optimizer.hpp"

namespace dattn {

/// Model checkpoint: serialized config followed by a manifest of named
/// parameter tensors (name, rank, little-endian u64 dims, little-endian f32
/// data). Byte-exact across a write/read/write round-trip.
void write_model_checkpoint(const std::string& path, const Model<float>& model);
Model<float> read_model_checkpoint(const std::string& path);

/// Everything beyond the parameters that bitwise resume needs.
struct TrainState {
  OptimizerState<float> opt;
  ReweightState reweight;
  std::string data_rng_state;     // mt19937_64 textual state
  std::string dropout_rng_state;  // mt19937_64 textual state
  std::vector<std::size_t> mono_cursors;
  std::vector<std::size_t> bi_cursors;
  long long scheduler_counter = 0;
  long long step = 0;
  bool initial_loss_set = false;
  double initial_loss = 0.0;
  int divergence_run = 0;
};

void write_train_state(const std::string& path, const TrainState& state);
TrainState read_train_state(const std::string& path);

}  // namespace dattn
