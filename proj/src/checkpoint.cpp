#include "spider/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "spider/errors.hpp"

namespace spider {

namespace {

template <class V>
void write_raw(std::ofstream& os, const V& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <class V>
V read_raw(std::ifstream& is, const std::string& what) {
  V value;
  is.read(reinterpret_cast<char*>(&value), sizeof(V));
  if (!is) throw IoError("checkpoint truncated while reading " + what);
  return value;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::add_f32(const std::string& name, const Shape& shape,
                         const std::vector<float>& data) {
  CheckpointTensor t;
  t.name = name;
  t.shape = shape;
  t.dtype = 1;
  t.f32 = data;
  tensors.push_back(std::move(t));
}

void Checkpoint::add_f64(const std::string& name, const Shape& shape,
                         const std::vector<double>& data) {
  CheckpointTensor t;
  t.name = name;
  t.shape = shape;
  t.dtype = 2;
  t.f64 = data;
  tensors.push_back(std::move(t));
}

void Checkpoint::set_meta(const std::string& name, const std::vector<double>& values) {
  add_f64("meta." + name, {static_cast<int64_t>(values.size())}, values);
}

std::vector<double> Checkpoint::get_meta(const std::string& name) const {
  const CheckpointTensor* t = find("meta." + name);
  if (!t) throw IoError("checkpoint is missing metadata '" + name + "'");
  return t->f64;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write("SPDR", 4);
  write_raw<uint32_t>(os, kCheckpointVersion);
  write_raw<uint32_t>(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    write_raw<uint32_t>(os, static_cast<uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_raw<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t e : t.shape) write_raw<uint64_t>(os, static_cast<uint64_t>(e));
    write_raw<uint32_t>(os, t.dtype);
    if (t.dtype == 1) {
      if (static_cast<int64_t>(t.f32.size()) != t.numel())
        throw IoError("tensor '" + t.name + "' payload does not match shape");
      os.write(reinterpret_cast<const char*>(t.f32.data()),
               static_cast<std::streamsize>(t.f32.size() * sizeof(float)));
    } else if (t.dtype == 2) {
      if (static_cast<int64_t>(t.f64.size()) != t.numel())
        throw IoError("tensor '" + t.name + "' payload does not match shape");
      os.write(reinterpret_cast<const char*>(t.f64.data()),
               static_cast<std::streamsize>(t.f64.size() * sizeof(double)));
    } else {
      throw IoError("tensor '" + t.name + "' has unknown dtype tag");
    }
  }
  if (!os) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SPDR", 4) != 0)
    throw IoError("'" + path + "' is not a checkpoint (bad magic)");
  const auto version = read_raw<uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = read_raw<uint32_t>(is, "tensor count");
  Checkpoint ckpt;
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    const auto name_len = read_raw<uint32_t>(is, "name length");
    t.name.resize(name_len);
    is.read(t.name.data(), name_len);
    if (!is) throw IoError("checkpoint truncated while reading a name");
    const auto rank = read_raw<uint32_t>(is, "rank");
    for (uint32_t r = 0; r < rank; ++r)
      t.shape.push_back(static_cast<int64_t>(read_raw<uint64_t>(is, "extent")));
    t.dtype = read_raw<uint32_t>(is, "dtype");
    const int64_t n = t.numel();
    if (t.dtype == 1) {
      t.f32.resize(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(t.f32.data()),
              static_cast<std::streamsize>(n * sizeof(float)));
    } else if (t.dtype == 2) {
      t.f64.resize(static_cast<size_t>(n));
      is.read(reinterpret_cast<char*>(t.f64.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    } else {
      throw IoError("tensor '" + t.name + "' has unknown dtype tag " +
                    std::to_string(t.dtype));
    }
    if (!is) throw IoError("checkpoint truncated while reading tensor '" + t.name + "'");
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

namespace {

template <class T>
void add_typed(Checkpoint& ckpt, const std::string& name, const Tensor<T>& t);

template <>
void add_typed<float>(Checkpoint& ckpt, const std::string& name, const Tensor<float>& t) {
  ckpt.add_f32(name, t.shape(), t.vec());
}

template <>
void add_typed<double>(Checkpoint& ckpt, const std::string& name, const Tensor<double>& t) {
  ckpt.add_f64(name, t.shape(), t.vec());
}

template <class T>
void load_typed(const CheckpointTensor& src, Tensor<T>& dst) {
  if (src.shape != dst.shape())
    throw IoError("checkpoint tensor '" + src.name + "' has shape " + shape_str(src.shape) +
                  ", model expects " + shape_str(dst.shape()));
  if (src.dtype == 1) {
    if constexpr (std::is_same_v<T, float>) {
      dst.vec() = src.f32;
    } else {
      for (size_t i = 0; i < src.f32.size(); ++i) dst.data()[i] = src.f32[i];
    }
  } else {
    if constexpr (std::is_same_v<T, double>) {
      dst.vec() = src.f64;
    } else {
      for (size_t i = 0; i < src.f64.size(); ++i)
        dst.data()[i] = static_cast<float>(src.f64[i]);
    }
  }
}

}  // namespace

template <class T>
Checkpoint checkpoint_from_model(const ModelParams<T>& model, uint64_t config_digest,
                                 int64_t epoch) {
  Checkpoint ckpt;
  const auto& cfg = model.config;
  ckpt.set_meta("format", {1});
  ckpt.set_meta("config_digest", {static_cast<double>(config_digest >> 32),
                                  static_cast<double>(config_digest & 0xffffffffULL)});
  ckpt.set_meta("epoch", {static_cast<double>(epoch)});
  ckpt.set_meta("model_config",
                {static_cast<double>(cfg.widths[0]), static_cast<double>(cfg.widths[1]),
                 static_cast<double>(cfg.widths[2]), static_cast<double>(cfg.channels),
                 static_cast<double>(cfg.blocks), static_cast<double>(cfg.heads),
                 cfg.shared_prompt_encoder ? 1.0 : 0.0});
  for (const auto& [name, t] : model.params()) add_typed<T>(ckpt, name, *t);
  for (const auto& [name, t] : model.buffers()) add_typed<T>(ckpt, name, *t);
  return ckpt;
}

template <class T>
ModelParams<T> model_from_checkpoint(const Checkpoint& ckpt) {
  const auto mc = ckpt.get_meta("model_config");
  if (mc.size() != 7) throw IoError("checkpoint model_config metadata is malformed");
  ModelConfig cfg;
  cfg.widths = {static_cast<int64_t>(mc[0]), static_cast<int64_t>(mc[1]),
                static_cast<int64_t>(mc[2])};
  cfg.channels = static_cast<int64_t>(mc[3]);
  cfg.blocks = static_cast<int64_t>(mc[4]);
  cfg.heads = static_cast<int64_t>(mc[5]);
  cfg.shared_prompt_encoder = mc[6] != 0.0;
  ModelParams<T> model = make_model<T>(cfg, /*seed=*/0);
  for (const auto& [name, t] : model.params()) {
    const CheckpointTensor* src = ckpt.find(name);
    if (!src) throw IoError("checkpoint is missing parameter '" + name + "'");
    load_typed<T>(*src, *t);
  }
  for (const auto& [name, t] : model.buffers()) {
    const CheckpointTensor* src = ckpt.find(name);
    if (!src) throw IoError("checkpoint is missing buffer '" + name + "'");
    load_typed<T>(*src, *t);
  }
  return model;
}

uint64_t checkpoint_digest(const Checkpoint& ckpt) {
  const auto v = ckpt.get_meta("config_digest");
  if (v.size() != 2) throw IoError("checkpoint config_digest metadata is malformed");
  return (static_cast<uint64_t>(v[0]) << 32) | static_cast<uint64_t>(v[1]);
}

int64_t checkpoint_epoch(const Checkpoint& ckpt) {
  return static_cast<int64_t>(ckpt.get_meta("epoch").at(0));
}

template Checkpoint checkpoint_from_model<float>(const ModelParams<float>&, uint64_t, int64_t);
template Checkpoint checkpoint_from_model<double>(const ModelParams<double>&, uint64_t, int64_t);
template ModelParams<float> model_from_checkpoint<float>(const Checkpoint&);
template ModelParams<double> model_from_checkpoint<double>(const Checkpoint&);

}  // namespace spider
