#ifndef SPIDER_TRAIN_HPP
#define SPIDER_TRAIN_HPP

#include <cmath>
#include <string>
#include <vector>

#include "spider/filter.hpp"
#include "spider/model.hpp"
#include "spider/ops.hpp"
#include "spider/rng.hpp"
#include "spider/synthetic.hpp"

namespace spider {

enum class Strategy { BalanceUnify, RandomUnify, BalanceSeparate };

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::BalanceUnify: return "balance_unify";
    case Strategy::RandomUnify: return "random_unify";
    case Strategy::BalanceSeparate: return "balance_separate";
  }
  throw ContractError("unknown strategy");
}

inline Strategy strategy_from_name(const std::string& s) {
  if (s == "balance_unify") return Strategy::BalanceUnify;
  if (s == "random_unify") return Strategy::RandomUnify;
  if (s == "balance_separate") return Strategy::BalanceSeparate;
  throw ConfigError("unknown strategy '" + s + "'");
}

struct TrainConfig {
  std::vector<std::string> tasks;
  int64_t samples_per_task = 8;   // N: drawn per task per iteration
  int64_t batch_per_task = 2;     // B: segmentation slice; N-B become prompts
  int64_t epochs = 30;
  double lr = 1e-4;
  int64_t decay_size = 30;
  double decay_rate = 0.9;
  Strategy strategy = Strategy::BalanceUnify;
  uint64_t seed = 1;
  bool step_per_outer = false;  // optimizer step per outer batch instead of per
                                // inner iteration
  bool flip_augment = true;
  int64_t ppa_window = 7;
  bool strict_nan = false;
  bool freeze_bn = false;  // eval-mode normalization, no running-stat updates
                           // (continual fine-tuning)

  void validate() const {
    if (tasks.empty()) throw ConfigError("train config needs at least one task");
    if (batch_per_task < 1 || batch_per_task >= samples_per_task)
      throw ConfigError("need 1 <= B < N, got B=" + std::to_string(batch_per_task) +
                        " N=" + std::to_string(samples_per_task));
    if (samples_per_task % batch_per_task != 0)
      throw ConfigError("N must be divisible by B");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (lr <= 0) throw ConfigError("lr must be positive");
    if (ppa_window < 1 || ppa_window % 2 == 0)
      throw ConfigError("ppa window must be odd and positive");
  }

  double lr_at_epoch(int64_t epoch) const {
    return lr * std::pow(decay_rate, static_cast<double>(epoch / decay_size));
  }
};

// One task's samples stacked into dense tensors for fast slicing.
template <class T>
struct TaskTensors {
  std::string task_id;
  TensorPtr<T> images;  // [n, 3, H, W]
  TensorPtr<T> masks;   // [n, 1, H, W]
  int64_t count() const { return images->dim(0); }
};

// Stacks a split of a synthetic dataset into dense per-task tensors,
// converting to the requested precision.
template <class T>
TaskTensors<T> to_task_tensors(const TaskDataset& ds, bool test_split = false) {
  const auto& samples = test_split ? ds.test : ds.train;
  if (samples.empty()) throw DataError("dataset split is empty");
  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t H = samples[0].image->dim(1), W = samples[0].image->dim(2);
  TaskTensors<T> out;
  out.task_id = concept_name(ds.config.task);
  out.images = make_tensor<T>({n, 3, H, W});
  out.masks = make_tensor<T>({n, 1, H, W});
  for (int64_t i = 0; i < n; ++i) {
    const auto& img = samples[i].image;
    const auto& mask = samples[i].masks.at(ds.config.task);
    for (int64_t j = 0; j < img->numel(); ++j)
      out.images->data()[i * img->numel() + j] = static_cast<T>(img->data()[j]);
    for (int64_t j = 0; j < mask->numel(); ++j)
      out.masks->data()[i * mask->numel() + j] = static_cast<T>(mask->data()[j]);
  }
  return out;
}

// Samples for one training iteration, all tasks stacked: row (t, j) of the
// task-major layout is t * N + j.
template <class T>
struct IterationBatch {
  TensorPtr<T> images;  // [tasks*N, 3, H, W]
  TensorPtr<T> masks;   // [tasks*N, 1, H, W]
  int64_t n_per_task = 0;
};

namespace train_detail {

template <class T>
void copy_row(const TensorPtr<T>& src, int64_t src_row, const TensorPtr<T>& dst,
              int64_t dst_row, bool flip) {
  const int64_t C = src->dim(1), H = src->dim(2), W = src->dim(3);
  const T* s = src->data() + src_row * C * H * W;
  T* d = dst->data() + dst_row * C * H * W;
  if (!flip) {
    std::copy(s, s + C * H * W, d);
    return;
  }
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        d[(c * H + y) * W + x] = s[(c * H + y) * W + (W - 1 - x)];
}

}  // namespace train_detail

// Per task, N iid samples without replacement (optionally flipped), stacked in
// task-major order. Deterministic given the rng state.
template <class T>
IterationBatch<T> build_iteration_batch(const std::vector<TaskTensors<T>>& data,
                                        const TrainConfig& cfg, Rng& rng) {
  const int64_t N = cfg.samples_per_task;
  const int64_t nt = static_cast<int64_t>(data.size());
  for (const auto& d : data)
    if (d.count() < N)
      throw DataError("task '" + d.task_id + "' has " + std::to_string(d.count()) +
                      " samples, need at least N=" + std::to_string(N));
  const int64_t H = data[0].images->dim(2), W = data[0].images->dim(3);
  IterationBatch<T> out;
  out.images = make_tensor<T>({nt * N, 3, H, W});
  out.masks = make_tensor<T>({nt * N, 1, H, W});
  out.n_per_task = N;
  for (int64_t t = 0; t < nt; ++t) {
    const int64_t n = data[t].count();
    std::vector<int64_t> idx(n);
    for (int64_t i = 0; i < n; ++i) idx[i] = i;
    for (int64_t i = 0; i < N; ++i) {  // partial Fisher-Yates
      const int64_t j = i + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n - i)));
      std::swap(idx[i], idx[j]);
    }
    for (int64_t i = 0; i < N; ++i) {
      const bool flip = cfg.flip_augment && rng.bernoulli(0.5);
      train_detail::copy_row(data[t].images, idx[i], out.images, t * N + i, flip);
      train_detail::copy_row(data[t].masks, idx[i], out.masks, t * N + i, flip);
    }
  }
  return out;
}

// Pixel-position-aware loss: boundary-weighted BCE plus weighted IoU, mean
// over the batch. The weight map w = 1 + 5*|avgpool_k(gt) - gt| emphasizes
// pixels whose neighbourhood disagrees with them.
template <class T>
TensorPtr<T> ppa_loss(const TensorPtr<T>& logits, const TensorPtr<T>& gt,
                      int64_t window = 7) {
  if (logits->shape() != gt->shape())
    throw DimensionError("ppa_loss shape mismatch: " + shape_str(logits->shape()) +
                         " vs " + shape_str(gt->shape()));
  for (int64_t i = 0; i < gt->numel(); ++i)
    if (gt->data()[i] < T(0) || gt->data()[i] > T(1))
      throw ContractError("ppa_loss ground truth outside [0,1]");

  TensorPtr<T> w;
  {
    NoGradGuard ng;
    auto pooled = ops::avg_pool2d(gt, window, 1, window / 2);
    w = make_tensor<T>(gt->shape());
    for (int64_t i = 0; i < gt->numel(); ++i)
      w->data()[i] = T(1) + T(5) * std::abs(pooled->data()[i] - gt->data()[i]);
  }

  auto bce = ops::bce_with_logits(logits, gt);
  auto wbce_num = ops::sum_per_sample(ops::mul(bce, w));
  auto w_sum = ops::sum_per_sample(w);  // constant
  auto wbce = ops::div(wbce_num, w_sum);

  auto p = ops::sigmoid(logits);
  auto pg = ops::mul(p, gt);
  auto inter = ops::sum_per_sample(ops::mul(w, pg));
  auto uni = ops::sum_per_sample(ops::mul(w, ops::sub(ops::add(p, gt), pg)));
  auto ratio = ops::div(ops::add_scalar(inter, 1.0), ops::add_scalar(uni, 1.0));
  auto wiou = ops::add_scalar(ops::scale(ratio, -1.0), 1.0);

  return ops::mean_all(ops::add(wbce, wiou));
}

template <class T>
struct LossBreakdown {
  TensorPtr<T> total;
  std::vector<double> per_task;
};

// Alg-style inner iteration in the balanced regime: one concatenated
// segmentation batch (batch norm sees all tasks jointly), one concept filter
// per task from the complementary N-B prompts, loss summed over tasks.
template <class T>
LossBreakdown<T> multitask_loss(ModelParams<T>& model, const IterationBatch<T>& batch,
                                const TrainConfig& cfg, int64_t inner, ForwardMode mode) {
  const int64_t N = cfg.samples_per_task, B = cfg.batch_per_task;
  const int64_t nt = static_cast<int64_t>(cfg.tasks.size());
  if (inner < 0 || inner >= N / B)
    throw ContractError("inner iteration index " + std::to_string(inner) + " out of range");
  const int64_t H = batch.images->dim(2), W = batch.images->dim(3);

  std::vector<TensorPtr<T>> seg_parts;
  for (int64_t t = 0; t < nt; ++t)
    seg_parts.push_back(
        ops::slice_rows(batch.images, t * N + inner * B, t * N + (inner + 1) * B));
  auto seg = ops::concat_rows(seg_parts);

  auto pyramid = encode(seg, model.encoder, mode);
  auto f = decode(pyramid, model.decoder);

  LossBreakdown<T> out;
  for (int64_t t = 0; t < nt; ++t) {
    std::vector<TensorPtr<T>> pi, pm;
    if (inner > 0) {
      pi.push_back(ops::slice_rows(batch.images, t * N, t * N + inner * B));
      pm.push_back(ops::slice_rows(batch.masks, t * N, t * N + inner * B));
    }
    if ((inner + 1) * B < N) {
      pi.push_back(ops::slice_rows(batch.images, t * N + (inner + 1) * B, t * N + N));
      pm.push_back(ops::slice_rows(batch.masks, t * N + (inner + 1) * B, t * N + N));
    }
    auto prompt = make_group_prompt<T>(ops::concat_rows(pi), ops::concat_rows(pm),
                                       cfg.tasks[t]);
    auto filter = build_filter(prompt, model);
    auto logits = dynamic_head(ops::slice_rows(f, t * B, (t + 1) * B), filter, H, W);
    auto gt = ops::slice_rows(batch.masks, t * N + inner * B, t * N + (inner + 1) * B);
    auto lt = ppa_loss(logits, gt, cfg.ppa_window);
    out.per_task.push_back(static_cast<double>(lt->value()));
    out.total = out.total ? ops::add(out.total, lt) : lt;
  }
  return out;
}

// Bias-corrected Adam over an explicit parameter list; gradients are zeroed
// after the update.
template <class T>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::vector<std::vector<T>> m, v;

  void ensure(const std::vector<std::pair<std::string, TensorPtr<T>>>& params) {
    if (!m.empty()) return;
    for (const auto& [name, p] : params) {
      m.emplace_back(p->numel(), T(0));
      v.emplace_back(p->numel(), T(0));
    }
  }
};

template <class T>
void adam_step(const std::vector<std::pair<std::string, TensorPtr<T>>>& params,
               AdamState<T>& state, double lr) {
  state.ensure(params);
  if (state.m.size() != params.size())
    throw ContractError("adam state does not match parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto& p = params[pi].second;
    if (!p->requires_grad())
      throw ContractError("adam_step: registered parameter '" + params[pi].first +
                          "' has no gradient");
    T* theta = p->data();
    T* g = p->grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (int64_t i = 0; i < p->numel(); ++i) {
      m[i] = static_cast<T>(state.beta1 * m[i] + (1.0 - state.beta1) * g[i]);
      v[i] = static_cast<T>(state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
    std::fill(g, g + p->numel(), T(0));
  }
}

struct LossCurvePoint {
  int64_t iteration = 0;
  int64_t epoch = 0;
  double lr = 0;
  double total = 0;
  std::vector<double> per_task;
};

using LossCurve = std::vector<LossCurvePoint>;

// One inner iteration: forward per the strategy, one unified (or per-task)
// backward, optional optimizer step. Returns the logged losses.
template <class T>
LossBreakdown<T> train_step(ModelParams<T>& model, const IterationBatch<T>& batch,
                            const TrainConfig& cfg, int64_t inner, AdamState<T>& adam,
                            double lr, Rng& rng, bool do_step) {
  const int64_t N = cfg.samples_per_task, B = cfg.batch_per_task;
  const int64_t nt = static_cast<int64_t>(cfg.tasks.size());
  const int64_t H = batch.images->dim(2), W = batch.images->dim(3);
  const ForwardMode mode{!cfg.freeze_bn, !cfg.freeze_bn};

  if (cfg.strategy == Strategy::BalanceSeparate) {
    // balanced per-task batches, but one backward and one step per task
    LossBreakdown<T> out;
    out.per_task.assign(static_cast<size_t>(nt), 0.0);
    double total = 0;
    for (int64_t t = 0; t < nt; ++t) {
      Tape<T> tape;
      TapeScope<T> scope(&tape);
      auto seg = ops::slice_rows(batch.images, t * N + inner * B, t * N + (inner + 1) * B);
      auto f = decode(encode(seg, model.encoder, mode), model.decoder);
      std::vector<TensorPtr<T>> pi, pm;
      if (inner > 0) {
        pi.push_back(ops::slice_rows(batch.images, t * N, t * N + inner * B));
        pm.push_back(ops::slice_rows(batch.masks, t * N, t * N + inner * B));
      }
      if ((inner + 1) * B < N) {
        pi.push_back(ops::slice_rows(batch.images, t * N + (inner + 1) * B, t * N + N));
        pm.push_back(ops::slice_rows(batch.masks, t * N + (inner + 1) * B, t * N + N));
      }
      auto prompt = make_group_prompt<T>(ops::concat_rows(pi), ops::concat_rows(pm),
                                         cfg.tasks[t]);
      auto filter = build_filter(prompt, model);
      auto logits = dynamic_head(f, filter, H, W);
      auto gt = ops::slice_rows(batch.masks, t * N + inner * B, t * N + (inner + 1) * B);
      auto lt = ppa_loss(logits, gt, cfg.ppa_window);
      out.per_task[t] = static_cast<double>(lt->value());
      total += out.per_task[t];
      tape.backward(lt);
      if (do_step) adam_step(model.trainable_params(), adam, lr);
    }
    out.total = make_tensor<T>({1}, static_cast<T>(total));
    return out;
  }

  Tape<T> tape;
  TapeScope<T> scope(&tape);
  LossBreakdown<T> out;

  if (cfg.strategy == Strategy::BalanceUnify) {
    out = multitask_loss(model, batch, cfg, inner, mode);
  } else {
    // RandomUnify: the segmentation batch is a uniform task multiset of the
    // same total size; prompts stay complementary per task
    const int64_t slots = nt * B;
    std::vector<std::vector<int64_t>> rows_per_task(static_cast<size_t>(nt));
    std::vector<TensorPtr<T>> seg_parts;
    std::vector<int64_t> slot_rows;
    for (int64_t s = 0; s < slots; ++s) {
      const int64_t t = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(nt)));
      const int64_t j = inner * B + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(B)));
      rows_per_task[t].push_back(s);
      slot_rows.push_back(t * N + j);
      seg_parts.push_back(ops::slice_rows(batch.images, t * N + j, t * N + j + 1));
    }
    auto seg = ops::concat_rows(seg_parts);
    auto f = decode(encode(seg, model.encoder, mode), model.decoder);
    out.per_task.assign(static_cast<size_t>(nt), 0.0);
    for (int64_t t = 0; t < nt; ++t) {
      if (rows_per_task[t].empty()) continue;
      std::vector<TensorPtr<T>> pi, pm;
      if (inner > 0) {
        pi.push_back(ops::slice_rows(batch.images, t * N, t * N + inner * B));
        pm.push_back(ops::slice_rows(batch.masks, t * N, t * N + inner * B));
      }
      if ((inner + 1) * B < N) {
        pi.push_back(ops::slice_rows(batch.images, t * N + (inner + 1) * B, t * N + N));
        pm.push_back(ops::slice_rows(batch.masks, t * N + (inner + 1) * B, t * N + N));
      }
      auto prompt = make_group_prompt<T>(ops::concat_rows(pi), ops::concat_rows(pm),
                                         cfg.tasks[t]);
      auto filter = build_filter(prompt, model);
      std::vector<TensorPtr<T>> fp, gp;
      for (int64_t s : rows_per_task[t]) {
        fp.push_back(ops::slice_rows(f, s, s + 1));
        gp.push_back(ops::slice_rows(batch.masks, slot_rows[s], slot_rows[s] + 1));
      }
      auto logits = dynamic_head(ops::concat_rows(fp), filter, H, W);
      auto lt = ppa_loss(logits, ops::concat_rows(gp), cfg.ppa_window);
      out.per_task[t] = static_cast<double>(lt->value());
      out.total = out.total ? ops::add(out.total, lt) : lt;
    }
  }

  if (!out.total) {
    out.total = make_tensor<T>({1}, T(0));
    return out;
  }
  tape.backward(out.total);
  if (do_step) adam_step(model.trainable_params(), adam, lr);
  return out;
}

// Full training loop with the configured strategy and step-decay schedule.
template <class T>
LossCurve run_training(ModelParams<T>& model, const std::vector<TaskTensors<T>>& data,
                       const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() != cfg.tasks.size())
    throw ConfigError("dataset count does not match task list");
  StrictScope strict(cfg.strict_nan);
  LossCurve curve;
  Rng rng = Rng(cfg.seed).derive(0x747261696eULL);
  AdamState<T> adam;
  const int64_t inner_per_outer = cfg.samples_per_task / cfg.batch_per_task;
  const int64_t outer_per_epoch = std::max<int64_t>(1, data[0].count() / cfg.samples_per_task);
  int64_t iteration = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at_epoch(epoch);
    for (int64_t outer = 0; outer < outer_per_epoch; ++outer) {
      auto batch = build_iteration_batch(data, cfg, rng);
      for (int64_t inner = 0; inner < inner_per_outer; ++inner) {
        auto losses = train_step(model, batch, cfg, inner, adam, lr, rng,
                                 /*do_step=*/!cfg.step_per_outer);
        LossCurvePoint pt;
        pt.iteration = iteration++;
        pt.epoch = epoch;
        pt.lr = lr;
        pt.total = static_cast<double>(losses.total->value());
        pt.per_task = losses.per_task;
        if (!std::isfinite(pt.total))
          throw NumericError("training loss diverged at iteration " +
                             std::to_string(pt.iteration));
        curve.push_back(pt);
      }
      if (cfg.step_per_outer) adam_step(model.trainable_params(), adam, cfg.lr_at_epoch(epoch));
    }
  }
  return curve;
}

}  // namespace spider

#endif
