#ifndef SPIDER_FILTER_HPP
#define SPIDER_FILTER_HPP

#include <string>
#include <vector>

#include "spider/model.hpp"
#include "spider/ops.hpp"

namespace spider {

// G image-mask pairs defining one task's concept by example.
template <class T>
struct GroupPrompt {
  TensorPtr<T> images;    // [G,3,H,W]
  TensorPtr<T> fg_masks;  // [G,1,H,W], values in [0,1]
  TensorPtr<T> bg_masks;  // [G,1,H,W], complement of fg
  std::string task_id;
  std::vector<std::string> provenance;  // identifiers of the source samples
};

template <class T>
void validate_group_prompt(const GroupPrompt<T>& p) {
  if (!p.images || !p.fg_masks || !p.bg_masks)
    throw ContractError("group prompt for task '" + p.task_id + "' is incomplete");
  const int64_t G = p.images->dim(0);
  if (p.fg_masks->dim(0) != G || p.bg_masks->dim(0) != G)
    throw DimensionError("group prompt mask count mismatch for task '" + p.task_id + "'");
  if (p.fg_masks->shape() != p.bg_masks->shape())
    throw DimensionError("fg/bg mask shape mismatch for task '" + p.task_id + "'");
  double fg_mass = 0, bg_mass = 0;
  for (int64_t i = 0; i < p.fg_masks->numel(); ++i) {
    const double fg = p.fg_masks->data()[i];
    const double bg = p.bg_masks->data()[i];
    if (std::abs(fg + bg - 1.0) > 1e-6)
      throw ContractError("bg_masks must equal 1 - fg_masks for task '" + p.task_id + "'");
    fg_mass += fg;
    bg_mass += bg;
  }
  if (fg_mass <= 0 || bg_mass <= 0)
    throw ContractError("group prompt for task '" + p.task_id +
                        "' needs nonzero fg and bg mass somewhere in the group");
}

// Builds the complement mask group automatically.
template <class T>
GroupPrompt<T> make_group_prompt(TensorPtr<T> images, const TensorPtr<T>& fg_masks,
                                 std::string task_id,
                                 std::vector<std::string> provenance = {}) {
  GroupPrompt<T> p;
  p.images = std::move(images);
  p.fg_masks = fg_masks;
  auto bg = make_tensor<T>(fg_masks->shape());
  for (int64_t i = 0; i < fg_masks->numel(); ++i)
    bg->data()[i] = T(1) - fg_masks->data()[i];
  p.bg_masks = bg;
  p.task_id = std::move(task_id);
  p.provenance = std::move(provenance);
  validate_group_prompt(p);
  return p;
}

// Per-task dynamic-head parameters generated from a group prompt.
template <class T>
struct ConceptFilter {
  TensorPtr<T> w_obj;  // [1, C]
  TensorPtr<T> b_ctx;  // [1, 1]
  std::string task_id;
  std::vector<std::string> provenance;
};

// [G, D, h, w] -> token sequence [G*h*w, C]; token order is (g, row, col)
// lexicographic. The feature input is gradient-free (it comes from the
// isolated prompt encoder); gradients flow into w_proj only.
template <class T>
TensorPtr<T> project_memory(const TensorPtr<T>& f_g, const PromptStreamParams<T>& ps) {
  if (f_g->rank() != 4)
    throw DimensionError("project_memory expects [G,D,h,w], got " + shape_str(f_g->shape()));
  const int64_t G = f_g->dim(0), D = f_g->dim(1), h = f_g->dim(2), w = f_g->dim(3);
  if (ps.w_proj->dim(0) != D)
    throw DimensionError("w_proj expects feature width " + std::to_string(ps.w_proj->dim(0)) +
                         ", got " + std::to_string(D));
  auto tokens = make_tensor<T>({G * h * w, D});
  for (int64_t g = 0; g < G; ++g)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        T* dst = tokens->data() + ((g * h + y) * w + x) * D;
        for (int64_t d = 0; d < D; ++d)
          dst[d] = f_g->data()[((g * D + d) * h + y) * w + x];
      }
  return ops::matmul(tokens, ps.w_proj);
}

// Bilinear soft mask at feature resolution, flattened in the same (g,row,col)
// token order as project_memory.
template <class T>
TensorPtr<T> downsample_mask_tokens(const TensorPtr<T>& masks, int64_t h, int64_t w) {
  auto small = ops::bilinear_resize(masks, h, w);  // [G,1,h,w]
  const int64_t G = small->dim(0);
  auto out = make_tensor<T>({G * h * w, 1});
  std::copy(small->data(), small->data() + small->numel(), out->data());
  return out;
}

// Mask-weighted mean of tokens: D = sum(F_mem * m) / (sum(m) + 1e-6).
template <class T>
TensorPtr<T> masked_average_pool(const TensorPtr<T>& f_mem, const TensorPtr<T>& mask_tokens,
                                 const std::string& task_id) {
  if (f_mem->dim(0) != mask_tokens->dim(0))
    throw DimensionError("masked_average_pool token count mismatch: " +
                         shape_str(f_mem->shape()) + " vs " + shape_str(mask_tokens->shape()));
  double total = 0;
  for (int64_t i = 0; i < mask_tokens->numel(); ++i) total += mask_tokens->data()[i];
  if (total < 1e-6)
    throw EmptyMaskError("empty mask group for task '" + task_id + "'");
  auto numer = ops::matmul(ops::transpose(mask_tokens), f_mem);  // [1, C]
  return ops::scale(numer, 1.0 / (total + 1e-6));
}

// One cross-attention refinement: the descriptor is the query, the prompt
// tokens are keys/values. Residual adds only, no normalization layers.
// attn_out, when given, receives each head's activation map.
template <class T>
TensorPtr<T> mhca_block(const TensorPtr<T>& x, const TensorPtr<T>& f_mem,
                        const MhcaBlockParams<T>& blk, int64_t heads,
                        std::vector<TensorPtr<T>>* attn_out = nullptr) {
  if (f_mem->dim(0) < 1) throw DimensionError("mhca_block needs at least one token");
  const int64_t C = x->dim(1);
  const int64_t dh = C / heads;
  const double d = std::sqrt(static_cast<double>(C) / static_cast<double>(heads));

  auto q = ops::matmul(x, blk.wq);
  auto k = ops::matmul(f_mem, blk.wk);
  auto v = ops::matmul(f_mem, blk.wv);
  std::vector<TensorPtr<T>> ctx;
  ctx.reserve(heads);
  for (int64_t hd = 0; hd < heads; ++hd) {
    auto qh = ops::slice_cols(q, hd * dh, (hd + 1) * dh);
    auto kh = ops::slice_cols(k, hd * dh, (hd + 1) * dh);
    auto vh = ops::slice_cols(v, hd * dh, (hd + 1) * dh);
    auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), 1.0 / d);
    auto attn = ops::softmax(scores, 1);
    if (attn_out) attn_out->push_back(attn);
    ctx.push_back(ops::matmul(attn, vh));
  }
  auto z = ops::add(x, ops::matmul(ops::concat_cols(ctx), blk.wz));
  auto hidden = ops::relu(ops::add_bias_rows(ops::matmul(z, blk.ffn_w1), blk.ffn_b1));
  auto ffn = ops::add_bias_rows(ops::matmul(hidden, blk.ffn_w2), blk.ffn_b2);
  return ops::add(z, ffn);
}

// Full prompt-stream pipeline: encode the image group, project to tokens,
// pool fg/bg descriptors, refine them through the cascaded blocks, and read
// out the dynamic-head weight and bias.
template <class T>
ConceptFilter<T> build_filter(const GroupPrompt<T>& prompt, const ModelParams<T>& model) {
  validate_group_prompt(prompt);
  auto f_g = prompt_encode(prompt.images, model);
  const int64_t h = f_g->dim(2), w = f_g->dim(3);
  auto f_mem = project_memory(f_g, model.prompt_stream);
  auto m_fg = downsample_mask_tokens(prompt.fg_masks, h, w);
  auto m_bg = downsample_mask_tokens(prompt.bg_masks, h, w);
  auto d_fg = masked_average_pool(f_mem, m_fg, prompt.task_id);
  auto d_bg = masked_average_pool(f_mem, m_bg, prompt.task_id);
  for (const auto& blk : model.prompt_stream.blocks) {
    d_fg = mhca_block(d_fg, f_mem, blk, model.config.heads);
    d_bg = mhca_block(d_bg, f_mem, blk, model.config.heads);
  }
  ConceptFilter<T> filter;
  filter.w_obj = d_fg;
  filter.b_ctx = ops::matmul(d_bg, model.prompt_stream.bias_proj);
  filter.task_id = prompt.task_id;
  filter.provenance = prompt.provenance;
  return filter;
}

// Per-pixel logit(p) = <w_obj, f(p)> + b_ctx, i.e. a 1x1 convolution whose
// kernel is the filter weight, bilinearly resized to the requested extent.
template <class T>
TensorPtr<T> dynamic_head(const TensorPtr<T>& f, const ConceptFilter<T>& filter,
                          int64_t out_h, int64_t out_w) {
  const int64_t C = f->dim(1);
  if (filter.w_obj->numel() != C)
    throw DimensionError("dynamic_head channel mismatch: filter length " +
                         std::to_string(filter.w_obj->numel()) + " vs feature " +
                         shape_str(f->shape()));
  auto kernel = ops::reshape(filter.w_obj, {1, C, 1, 1});
  auto bias = ops::reshape(filter.b_ctx, {1});
  auto logits = ops::conv2d(f, kernel, bias, 1, 0);
  return ops::bilinear_resize(logits, out_h, out_w);
}

}  // namespace spider

#endif
