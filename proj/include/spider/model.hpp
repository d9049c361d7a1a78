#ifndef SPIDER_MODEL_HPP
#define SPIDER_MODEL_HPP

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spider/ops.hpp"
#include "spider/rng.hpp"
#include "spider/tensor.hpp"

namespace spider {

struct ModelConfig {
  std::vector<int64_t> widths{16, 32, 64};  // encoder stage widths, strides 2/4/8
  int64_t channels = 16;                    // decoder output width C
  int64_t blocks = 2;                       // cascaded cross-attention blocks L
  int64_t heads = 4;
  bool shared_prompt_encoder = true;  // prompt stream reuses the segmentation
                                      // encoder (gradient-isolated); false uses
                                      // an independent frozen copy

  void validate() const {
    if (widths.size() != 3) throw ConfigError("encoder needs exactly 3 stage widths");
    for (int64_t w : widths)
      if (w < 1) throw ConfigError("encoder stage width must be positive");
    if (channels < 1 || blocks < 1 || heads < 1)
      throw ConfigError("channels, blocks and heads must be positive");
    if (channels % heads != 0)
      throw ConfigError("channels (" + std::to_string(channels) +
                        ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
};

template <class T>
struct ConvLayer {
  TensorPtr<T> w;  // [O, C, kh, kw]
  TensorPtr<T> b;  // [O]
};

template <class T>
struct BnLayer {
  TensorPtr<T> gamma, beta;              // learnable
  TensorPtr<T> running_mean, running_var;  // buffers
};

template <class T>
struct EncoderStage {
  ConvLayer<T> conv1, conv2;
  BnLayer<T> bn1, bn2;
};

template <class T>
struct EncoderParams {
  std::vector<EncoderStage<T>> stages;
};

template <class T>
struct DecoderParams {
  std::vector<ConvLayer<T>> lateral;  // 1x1, one per pyramid level (shallow first)
  std::vector<ConvLayer<T>> fuse;     // 3x3; fuse[0] is the final fusion conv
};

template <class T>
struct MhcaBlockParams {
  TensorPtr<T> wq, wk, wv, wz;          // [C, C]
  TensorPtr<T> ffn_w1, ffn_b1;          // [C, 4C], [1, 4C]
  TensorPtr<T> ffn_w2, ffn_b2;          // [4C, C], [1, C]
};

template <class T>
struct PromptStreamParams {
  TensorPtr<T> w_proj;                  // [deep_width, C]
  std::vector<MhcaBlockParams<T>> blocks;
  TensorPtr<T> bias_proj;               // [C, 1]
};

// All learnable weights plus the named-tensor registry used by the optimizer,
// checkpointing and the continual-learning freeze logic.
template <class T>
class ModelParams {
 public:
  ModelConfig config;
  EncoderParams<T> encoder;
  DecoderParams<T> decoder;
  PromptStreamParams<T> prompt_stream;
  std::optional<EncoderParams<T>> prompt_encoder;  // frozen copy when not shared

  const std::vector<std::pair<std::string, TensorPtr<T>>>& params() const { return params_; }
  const std::vector<std::pair<std::string, TensorPtr<T>>>& buffers() const { return buffers_; }

  TensorPtr<T> find(const std::string& name) const {
    for (const auto& [n, t] : params_)
      if (n == name) return t;
    for (const auto& [n, t] : buffers_)
      if (n == name) return t;
    return nullptr;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t->numel();
    return n;
  }

  int64_t trainable_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_)
      if (t->requires_grad()) n += t->numel();
    return n;
  }

  std::vector<std::pair<std::string, TensorPtr<T>>> trainable_params() const {
    std::vector<std::pair<std::string, TensorPtr<T>>> out;
    for (const auto& [name, t] : params_)
      if (t->requires_grad()) out.emplace_back(name, t);
    return out;
  }

  void zero_grads() {
    for (auto& [name, t] : params_) t->zero_grad();
  }

  void register_param(const std::string& name, TensorPtr<T> t) {
    t->set_requires_grad(true);
    params_.emplace_back(name, std::move(t));
  }

  void register_buffer(const std::string& name, TensorPtr<T> t) {
    buffers_.emplace_back(name, std::move(t));
  }

 private:
  std::vector<std::pair<std::string, TensorPtr<T>>> params_;
  std::vector<std::pair<std::string, TensorPtr<T>>> buffers_;
};

namespace init_detail {

template <class T>
void fill_uniform(Tensor<T>& t, Rng& rng, double bound) {
  for (int64_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
}

// He-uniform: matches the ReLU conv blocks
template <class T>
ConvLayer<T> make_conv(ModelParams<T>& m, const std::string& name, int64_t out_c,
                       int64_t in_c, int64_t k, Rng& rng) {
  ConvLayer<T> layer;
  layer.w = make_tensor<T>({out_c, in_c, k, k});
  fill_uniform(*layer.w, rng, std::sqrt(6.0 / static_cast<double>(in_c * k * k)));
  layer.b = make_tensor<T>({out_c});
  m.register_param(name + ".w", layer.w);
  m.register_param(name + ".b", layer.b);
  return layer;
}

template <class T>
BnLayer<T> make_bn(ModelParams<T>& m, const std::string& name, int64_t c) {
  BnLayer<T> bn;
  bn.gamma = make_tensor<T>({c}, T(1));
  bn.beta = make_tensor<T>({c});
  bn.running_mean = make_tensor<T>({c});
  bn.running_var = make_tensor<T>({c}, T(1));
  m.register_param(name + ".gamma", bn.gamma);
  m.register_param(name + ".beta", bn.beta);
  m.register_buffer(name + ".running_mean", bn.running_mean);
  m.register_buffer(name + ".running_var", bn.running_var);
  return bn;
}

template <class T>
TensorPtr<T> make_matrix(ModelParams<T>& m, const std::string& name, int64_t rows,
                         int64_t cols, Rng& rng) {
  auto t = make_tensor<T>({rows, cols});
  fill_uniform(*t, rng, std::sqrt(6.0 / static_cast<double>(rows + cols)));
  m.register_param(name, t);
  return t;
}

template <class T>
EncoderParams<T> make_encoder(ModelParams<T>& m, const std::string& prefix,
                              const ModelConfig& cfg, Rng& rng) {
  EncoderParams<T> enc;
  int64_t in_c = 3;
  for (size_t s = 0; s < cfg.widths.size(); ++s) {
    const int64_t w = cfg.widths[s];
    const std::string sp = prefix + ".s" + std::to_string(s);
    EncoderStage<T> stage;
    stage.conv1 = make_conv(m, sp + ".conv1", w, in_c, 3, rng);
    stage.bn1 = make_bn(m, sp + ".bn1", w);
    stage.conv2 = make_conv(m, sp + ".conv2", w, w, 3, rng);
    stage.bn2 = make_bn(m, sp + ".bn2", w);
    enc.stages.push_back(stage);
    in_c = w;
  }
  return enc;
}

}  // namespace init_detail

template <class T>
ModelParams<T> make_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams<T> m;
  m.config = cfg;
  Rng rng = Rng(seed).derive(0x6d6f64656cULL);

  m.encoder = init_detail::make_encoder(m, "enc", cfg, rng);

  const int64_t C = cfg.channels;
  for (size_t level = 0; level < cfg.widths.size(); ++level)
    m.decoder.lateral.push_back(init_detail::make_conv(
        m, "dec.lat" + std::to_string(level), C, cfg.widths[level], 1, rng));
  for (size_t level = 0; level + 1 < cfg.widths.size(); ++level)
    m.decoder.fuse.push_back(init_detail::make_conv(
        m, "dec.fuse" + std::to_string(level), C, C, 3, rng));

  const int64_t deep = cfg.widths.back();
  m.prompt_stream.w_proj = init_detail::make_matrix(m, "ps.w_proj", deep, C, rng);
  for (int64_t l = 0; l < cfg.blocks; ++l) {
    const std::string bp = "ps.blk" + std::to_string(l);
    MhcaBlockParams<T> blk;
    blk.wq = init_detail::make_matrix(m, bp + ".wq", C, C, rng);
    blk.wk = init_detail::make_matrix(m, bp + ".wk", C, C, rng);
    blk.wv = init_detail::make_matrix(m, bp + ".wv", C, C, rng);
    blk.wz = init_detail::make_matrix(m, bp + ".wz", C, C, rng);
    blk.ffn_w1 = init_detail::make_matrix(m, bp + ".ffn_w1", C, 4 * C, rng);
    blk.ffn_b1 = make_tensor<T>({1, 4 * C});
    m.register_param(bp + ".ffn_b1", blk.ffn_b1);
    blk.ffn_w2 = init_detail::make_matrix(m, bp + ".ffn_w2", 4 * C, C, rng);
    blk.ffn_b2 = make_tensor<T>({1, C});
    m.register_param(bp + ".ffn_b2", blk.ffn_b2);
    m.prompt_stream.blocks.push_back(blk);
  }
  m.prompt_stream.bias_proj = init_detail::make_matrix(m, "ps.u", C, 1, rng);

  if (!cfg.shared_prompt_encoder) {
    // independent frozen copy; registered as buffers since it never trains
    ModelParams<T> tmp;
    Rng rng2 = Rng(seed).derive(0x70726f6d7074ULL);
    m.prompt_encoder = init_detail::make_encoder(tmp, "pe", cfg, rng2);
    for (const auto& [name, t] : tmp.params()) {
      t->set_requires_grad(false);
      m.register_buffer(name, t);
    }
    for (const auto& [name, t] : tmp.buffers()) m.register_buffer(name, t);
  }
  return m;
}

// Freezes every parameter whose name does not start with one of the given
// prefixes. Returns the trainable fraction afterwards.
template <class T>
double freeze_except(ModelParams<T>& model, const std::vector<std::string>& prefixes) {
  for (const auto& [name, t] : model.params()) {
    bool keep = false;
    for (const auto& p : prefixes)
      if (name.rfind(p, 0) == 0) keep = true;
    t->set_requires_grad(keep);
  }
  return static_cast<double>(model.trainable_count()) /
         static_cast<double>(model.param_count());
}

template <class T>
void unfreeze_all(ModelParams<T>& model) {
  for (const auto& [name, t] : model.params()) t->set_requires_grad(true);
}

// Mode bits for a forward pass. update_running is split from `training` so
// gradient checking can use batch statistics without mutating state.
struct ForwardMode {
  bool training = false;
  bool update_running = true;
};

template <class T>
std::vector<TensorPtr<T>> encode(const TensorPtr<T>& images, const EncoderParams<T>& enc,
                                 ForwardMode mode) {
  if (images->rank() != 4 || images->dim(1) != 3)
    throw DimensionError("encode expects [B,3,H,W], got " + shape_str(images->shape()));
  if (images->dim(2) % 8 != 0 || images->dim(3) % 8 != 0)
    throw DimensionError("encode input extent " + shape_str(images->shape()) +
                         " not divisible by 8");
  std::vector<TensorPtr<T>> pyramid;
  TensorPtr<T> x = images;
  for (const auto& stage : enc.stages) {
    x = ops::relu(ops::batch_norm(ops::conv2d(x, stage.conv1.w, stage.conv1.b, 1, 1),
                                  stage.bn1.gamma, stage.bn1.beta, stage.bn1.running_mean,
                                  stage.bn1.running_var, mode.training, mode.update_running));
    x = ops::relu(ops::batch_norm(ops::conv2d(x, stage.conv2.w, stage.conv2.b, 1, 1),
                                  stage.bn2.gamma, stage.bn2.beta, stage.bn2.running_mean,
                                  stage.bn2.running_var, mode.training, mode.update_running));
    x = ops::avg_pool2d(x, 2, 2, 0);
    pyramid.push_back(x);
  }
  return pyramid;
}

// Top-down pathway: lateral 1x1, 2x bilinear upsample, add, 3x3 fusion.
// Returns the C-channel map at stride 2 that the dynamic head consumes.
template <class T>
TensorPtr<T> decode(const std::vector<TensorPtr<T>>& pyramid, const DecoderParams<T>& dec) {
  if (pyramid.size() != dec.lateral.size())
    throw DimensionError("decode: pyramid has " + std::to_string(pyramid.size()) +
                         " levels, decoder expects " + std::to_string(dec.lateral.size()));
  const size_t L = pyramid.size();
  TensorPtr<T> p = ops::conv2d(pyramid[L - 1], dec.lateral[L - 1].w, dec.lateral[L - 1].b, 1, 0);
  for (size_t level = L - 1; level-- > 0;) {
    auto lat = ops::conv2d(pyramid[level], dec.lateral[level].w, dec.lateral[level].b, 1, 0);
    auto up = ops::bilinear_resize(p, lat->dim(2), lat->dim(3));
    p = ops::conv2d(ops::add(lat, up), dec.fuse[level].w, dec.fuse[level].b, 1, 1);
  }
  return p;
}

// Deepest-stage features for the prompt stream. Gradient-isolated and always
// eval-normalized; never touches running statistics.
template <class T>
TensorPtr<T> prompt_encode(const TensorPtr<T>& images, const ModelParams<T>& model) {
  NoGradGuard ng;
  const EncoderParams<T>& enc =
      model.config.shared_prompt_encoder ? model.encoder : *model.prompt_encoder;
  auto pyramid = encode(images, enc, ForwardMode{false, false});
  return pyramid.back();
}

template <class T>
TensorPtr<T> gap_embed(const TensorPtr<T>& images, const ModelParams<T>& model) {
  NoGradGuard ng;
  return ops::global_avg_pool(prompt_encode(images, model));
}

}  // namespace spider

#endif
