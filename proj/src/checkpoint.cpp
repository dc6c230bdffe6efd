#include "dattn/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dattn {

namespace {

// All integers and floats are written little-endian; the implementation
// assumes a little-endian host, which covers the supported platforms.

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint truncated");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  auto len = get<std::uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw IoError("checkpoint truncated");
  return s;
}

void put_tensor(std::ostream& out, const std::string& name, const MatF& m) {
  put_string(out, name);
  put<std::uint32_t>(out, 2);  // rank
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(float) * m.size()));
}

std::pair<std::string, MatF> get_tensor(std::istream& in) {
  std::string name = get_string(in);
  auto rank = get<std::uint32_t>(in);
  if (rank != 2) {
    throw IoError("checkpoint tensor '" + name + "' has rank " +
                  std::to_string(rank) + ", expected 2");
  }
  auto rows = get<std::uint64_t>(in);
  auto cols = get<std::uint64_t>(in);
  MatF m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(float) * m.size()));
  if (!in) throw IoError("checkpoint truncated in tensor '" + name + "'");
  return {std::move(name), std::move(m)};
}

void put_tensor_map(std::ostream& out, const std::map<std::string, MatF>& m) {
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.size()));
  for (const auto& [name, value] : m) put_tensor(out, name, value);
}

std::map<std::string, MatF> get_tensor_map(std::istream& in) {
  auto count = get<std::uint64_t>(in);
  std::map<std::string, MatF> m;
  for (std::uint64_t i = 0; i < count; ++i) {
    m.insert(get_tensor(in));
  }
  return m;
}

constexpr std::uint32_t kModelMagic = 0x4e544144;  // "DATN"
constexpr std::uint32_t kStateMagic = 0x53544144;  // "DATS"

}  // namespace

void write_model_checkpoint(const std::string& path, const Model<float>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  put<std::uint32_t>(out, kModelMagic);
  put<std::uint32_t>(out, 1);  // version
  put_string(out, model.cfg.serialize());
  put_tensor_map(out, model.params);
  if (!out) throw IoError("failed writing '" + path + "'");
}

Model<float> read_model_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  if (get<std::uint32_t>(in) != kModelMagic) {
    throw IoError("'" + path + "' is not a model checkpoint");
  }
  if (get<std::uint32_t>(in) != 1) {
    throw IoError("unsupported checkpoint version in '" + path + "'");
  }
  Model<float> model;
  model.cfg = ModelConfig::parse(get_string(in));
  model.params = get_tensor_map(in);
  // Shape audit against the config's parameter list.
  auto shapes = param_shapes(model.cfg);
  if (shapes.size() != model.params.size()) {
    throw IoError("checkpoint '" + path + "' holds " +
                  std::to_string(model.params.size()) + " tensors, config needs " +
                  std::to_string(shapes.size()));
  }
  for (const ParamShape& s : shapes) {
    auto it = model.params.find(s.name);
    if (it == model.params.end()) {
      throw IoError("checkpoint '" + path + "' is missing tensor '" + s.name +
                    "'");
    }
    if (it->second.rows() != s.rows || it->second.cols() != s.cols) {
      throw IoError("checkpoint tensor '" + s.name + "' has the wrong shape");
    }
  }
  return model;
}

void write_train_state(const std::string& path, const TrainState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  put<std::uint32_t>(out, kStateMagic);
  put<std::uint32_t>(out, 1);
  put<std::int64_t>(out, state.step);
  put<std::uint8_t>(out, state.initial_loss_set ? 1 : 0);
  put<double>(out, state.initial_loss);
  put<std::int32_t>(out, state.divergence_run);

  put<std::int64_t>(out, state.opt.step);
  put_tensor_map(out, state.opt.m);
  put_tensor_map(out, state.opt.v);

  put_string(out, state.data_rng_state);
  put_string(out, state.dropout_rng_state);

  put<std::uint64_t>(out, static_cast<std::uint64_t>(state.mono_cursors.size()));
  for (std::size_t c : state.mono_cursors) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(c));
  }
  put<std::uint64_t>(out, static_cast<std::uint64_t>(state.bi_cursors.size()));
  for (std::size_t c : state.bi_cursors) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(c));
  }
  put<std::int64_t>(out, state.scheduler_counter);

  const ReweightConfig& rc = state.reweight.cfg;
  put<double>(out, rc.alpha);
  put<double>(out, rc.gamma);
  put<double>(out, rc.loss_threshold);
  put<std::int64_t>(out, rc.step_threshold);
  put<double>(out, rc.ema_decay);
  put<std::uint64_t>(out,
                     static_cast<std::uint64_t>(state.reweight.groups.size()));
  for (const auto& [key, group] : state.reweight.groups) {
    put<std::int32_t>(out, key.language);
    put<std::uint8_t>(out, key.data_type == DataType::mono ? 0 : 1);
    put<double>(out, group.ema_ce);
    put<std::uint8_t>(out, group.initialized ? 1 : 0);
    put<double>(out, group.gamma_l);
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

TrainState read_train_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  if (get<std::uint32_t>(in) != kStateMagic) {
    throw IoError("'" + path + "' is not a train-state file");
  }
  if (get<std::uint32_t>(in) != 1) {
    throw IoError("unsupported train-state version in '" + path + "'");
  }
  TrainState state;
  state.step = get<std::int64_t>(in);
  state.initial_loss_set = get<std::uint8_t>(in) != 0;
  state.initial_loss = get<double>(in);
  state.divergence_run = get<std::int32_t>(in);

  state.opt.step = get<std::int64_t>(in);
  state.opt.m = get_tensor_map(in);
  state.opt.v = get_tensor_map(in);

  state.data_rng_state = get_string(in);
  state.dropout_rng_state = get_string(in);

  auto mono_count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < mono_count; ++i) {
    state.mono_cursors.push_back(static_cast<std::size_t>(get<std::uint64_t>(in)));
  }
  auto bi_count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < bi_count; ++i) {
    state.bi_cursors.push_back(static_cast<std::size_t>(get<std::uint64_t>(in)));
  }
  state.scheduler_counter = get<std::int64_t>(in);

  state.reweight.cfg.alpha = get<double>(in);
  state.reweight.cfg.gamma = get<double>(in);
  state.reweight.cfg.loss_threshold = get<double>(in);
  state.reweight.cfg.step_threshold = get<std::int64_t>(in);
  state.reweight.cfg.ema_decay = get<double>(in);
  auto group_count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < group_count; ++i) {
    GroupKey key;
    key.language = get<std::int32_t>(in);
    key.data_type = get<std::uint8_t>(in) == 0 ? DataType::mono : DataType::bilingual;
    GroupReweight group;
    group.ema_ce = get<double>(in);
    group.initialized = get<std::uint8_t>(in) != 0;
    group.gamma_l = get<double>(in);
    state.reweight.groups.emplace(key, group);
  }
  return state;
}

}  // namespace dattn
