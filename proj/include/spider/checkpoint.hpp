#ifndef SPIDER_CHECKPOINT_HPP
#define SPIDER_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "spider/model.hpp"
#include "spider/tensor.hpp"

namespace spider {

// Wire format: magic "SPDR", u32 LE version, u32 tensor count, then per
// tensor: u32 name length + UTF-8 name, u32 rank, u64 extents, u32 dtype tag
// (1 = f32, 2 = f64), raw little-endian payload. Metadata rides along as
// reserved "meta.*" tensors.
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  uint32_t dtype = 1;  // 1 = f32, 2 = f64
  std::vector<float> f32;
  std::vector<double> f64;

  int64_t numel() const { return shape_numel(shape); }
};

struct Checkpoint {
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
  bool has(const std::string& name) const { return find(name) != nullptr; }

  void add_f32(const std::string& name, const Shape& shape, const std::vector<float>& data);
  void add_f64(const std::string& name, const Shape& shape, const std::vector<double>& data);

  void set_meta(const std::string& name, const std::vector<double>& values);
  std::vector<double> get_meta(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Model state (parameters and buffers) plus enough metadata to rebuild it.
template <class T>
Checkpoint checkpoint_from_model(const ModelParams<T>& model, uint64_t config_digest,
                                 int64_t epoch);

template <class T>
ModelParams<T> model_from_checkpoint(const Checkpoint& ckpt);

uint64_t checkpoint_digest(const Checkpoint& ckpt);
int64_t checkpoint_epoch(const Checkpoint& ckpt);

}  // namespace spider

#endif
