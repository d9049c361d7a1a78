#include "spider/experiments.hpp"

#include <algorithm>

#include "spider/synthetic.hpp"

namespace spider {

int64_t DeskContext::task_index(const std::string& task_id) const {
  for (size_t i = 0; i < train_cfg.tasks.size(); ++i)
    if (train_cfg.tasks[i] == task_id) return static_cast<int64_t>(i);
  throw ConfigError("task '" + task_id + "' is not part of this run");
}

DeskContext make_context(const ModelConfig& mc, const TrainConfig& tc,
                         const std::vector<TaskConfig>& task_cfgs,
                         const std::string& digest) {
  if (task_cfgs.size() != tc.tasks.size())
    throw ConfigError("task config count does not match task list");
  DeskContext ctx;
  ctx.model_cfg = mc;
  ctx.train_cfg = tc;
  ctx.task_cfgs = task_cfgs;
  ctx.digest = digest;
  for (const auto& task_cfg : task_cfgs) {
    ctx.datasets.push_back(make_dataset(task_cfg));
    ctx.tensors.push_back(to_task_tensors<float>(ctx.datasets.back()));
  }
  return ctx;
}

ModelParams<float> train_fresh(const DeskContext& ctx, const std::vector<std::string>& tasks,
                               Strategy strategy, int64_t epochs, uint64_t seed,
                               LossCurve* curve_out) {
  TrainConfig cfg = ctx.train_cfg;
  cfg.tasks = tasks;
  cfg.strategy = strategy;
  cfg.epochs = epochs;
  cfg.seed = seed;
  std::vector<TaskTensors<float>> data;
  for (const auto& t : tasks) data.push_back(ctx.tensors[ctx.task_index(t)]);
  auto model = make_model<float>(ctx.model_cfg, seed);
  auto curve = run_training(model, data, cfg);
  if (curve_out) *curve_out = std::move(curve);
  return model;
}

GroupPrompt<float> prompt_from_ids(const DeskContext& ctx, int64_t task_index,
                                   const std::vector<int64_t>& ids,
                                   const MaskTransform& transform) {
  const auto& ds = ctx.datasets.at(task_index);
  const Concept concept = ds.config.task;
  if (ids.empty()) throw DataError("prompt id list for task is empty");
  const int64_t g = static_cast<int64_t>(ids.size());
  const int64_t hw = ds.config.gen.canvas;
  auto images = make_tensor<float>({g, 3, hw, hw});
  auto fg = make_tensor<float>({g, 1, hw, hw});
  std::vector<std::string> provenance;
  for (int64_t j = 0; j < g; ++j) {
    const int64_t id = ids[j];
    if (id < 0 || id >= static_cast<int64_t>(ds.train.size()))
      throw DataError("prompt sample id " + std::to_string(id) + " out of range for task " +
                      concept_name(concept));
    const auto& sample = ds.train[id];
    std::copy(sample.image->data(), sample.image->data() + sample.image->numel(),
              images->data() + j * sample.image->numel());
    TensorPtr<float> mask = sample.masks.at(concept);
    if (transform) mask = transform(mask);
    std::copy(mask->data(), mask->data() + mask->numel(), fg->data() + j * mask->numel());
    provenance.push_back(concept_name(concept) + ":" + std::to_string(id));
  }
  return make_group_prompt<float>(images, fg, concept_name(concept), provenance);
}

EmbeddingIndex embedding_index(const ModelParams<float>& model, const DeskContext& ctx,
                               int64_t task_index) {
  const auto& tt = ctx.tensors.at(task_index);
  EmbeddingIndex index;
  index.task_id = tt.task_id;
  auto emb = gap_embed(tt.images, model);
  const int64_t dim = emb->dim(1);
  for (int64_t i = 0; i < tt.count(); ++i) {
    index.points.emplace_back(emb->data() + i * dim, emb->data() + (i + 1) * dim);
    index.sample_ids.push_back(i);
  }
  return index;
}

std::map<std::string, std::vector<int64_t>> clustered_prompt_ids(
    const ModelParams<float>& model, const DeskContext& ctx, int64_t k, uint64_t seed) {
  std::map<std::string, std::vector<int64_t>> out;
  for (size_t t = 0; t < ctx.train_cfg.tasks.size(); ++t) {
    auto index = embedding_index(model, ctx, static_cast<int64_t>(t));
    out[ctx.train_cfg.tasks[t]] = select_representatives(index, k, seed);
  }
  return out;
}

std::map<std::string, ConceptFilter<float>> filters_from_ids(
    const ModelParams<float>& model, const DeskContext& ctx,
    const std::map<std::string, std::vector<int64_t>>& ids, const MaskTransform& transform) {
  std::map<std::string, ConceptFilter<float>> out;
  for (const auto& [task, id_list] : ids) {
    auto prompt = prompt_from_ids(ctx, ctx.task_index(task), id_list, transform);
    out[task] = build_filter(prompt, model);
  }
  return out;
}

std::map<std::string, ConceptFilter<float>> random_filters(const ModelParams<float>& model,
                                                           const DeskContext& ctx,
                                                           int64_t g, uint64_t seed) {
  std::map<std::string, std::vector<int64_t>> ids;
  for (size_t t = 0; t < ctx.train_cfg.tasks.size(); ++t)
    ids[ctx.train_cfg.tasks[t]] =
        random_prompts(ctx.tensors[t].count(), g, seed + 7919 * t);
  return filters_from_ids(model, ctx, ids);
}

MetricReport evaluate_context(const ModelParams<float>& model, const DeskContext& ctx,
                              const std::map<std::string, ConceptFilter<float>>& filters,
                              uint64_t seed) {
  std::vector<const TaskDataset*> sets;
  for (const auto& [task, filter] : filters)
    sets.push_back(&ctx.datasets[ctx.task_index(task)]);
  return evaluate(model, filters, sets, seed, ctx.digest);
}

namespace {

void append_report(std::vector<ExperimentRow>& rows, const std::string& variant,
                   const MetricReport& report) {
  for (const auto& r : report.rows) rows.push_back(ExperimentRow{variant, r});
}

}  // namespace

std::vector<ExperimentRow> experiment_joint_vs_separate(const DeskContext& ctx,
                                                        int64_t epochs,
                                                        const std::vector<uint64_t>& seeds) {
  std::vector<ExperimentRow> rows;
  for (uint64_t seed : seeds) {
    auto joint = train_fresh(ctx, ctx.train_cfg.tasks, Strategy::BalanceUnify, epochs, seed);
    auto joint_filters =
        filters_from_ids(joint, ctx, clustered_prompt_ids(joint, ctx, 8, seed));
    append_report(rows, "joint", evaluate_context(joint, ctx, joint_filters, seed));

    for (const auto& task : ctx.train_cfg.tasks) {
      auto solo = train_fresh(ctx, {task}, Strategy::BalanceUnify, epochs, seed);
      auto index = embedding_index(solo, ctx, ctx.task_index(task));
      std::map<std::string, std::vector<int64_t>> ids;
      ids[task] = select_representatives(index, 8, seed);
      auto filters = filters_from_ids(solo, ctx, ids);
      append_report(rows, "separate", evaluate_context(solo, ctx, filters, seed));
    }
  }
  return rows;
}

std::vector<ExperimentRow> experiment_strategies(const DeskContext& ctx, int64_t epochs,
                                                 const std::vector<uint64_t>& seeds) {
  std::vector<ExperimentRow> rows;
  for (uint64_t seed : seeds) {
    for (Strategy strat : {Strategy::BalanceUnify, Strategy::RandomUnify,
                           Strategy::BalanceSeparate}) {
      auto model = train_fresh(ctx, ctx.train_cfg.tasks, strat, epochs, seed);
      auto filters = filters_from_ids(model, ctx, clustered_prompt_ids(model, ctx, 8, seed));
      append_report(rows, strategy_name(strat), evaluate_context(model, ctx, filters, seed));
    }
  }
  return rows;
}

std::vector<ExperimentRow> experiment_prompt_count(const ModelParams<float>& model,
                                                   const DeskContext& ctx,
                                                   const std::vector<int64_t>& g_list,
                                                   const std::vector<uint64_t>& seeds,
                                                   int64_t cluster_k) {
  std::vector<ExperimentRow> rows;
  for (int64_t g : g_list)
    for (uint64_t seed : seeds) {
      auto filters = random_filters(model, ctx, g, seed);
      append_report(rows, "random_g" + std::to_string(g),
                    evaluate_context(model, ctx, filters, seed));
    }
  auto clustered =
      filters_from_ids(model, ctx, clustered_prompt_ids(model, ctx, cluster_k, seeds.at(0)));
  append_report(rows, "clustered_k" + std::to_string(cluster_k),
                evaluate_context(model, ctx, clustered, seeds.at(0)));
  return rows;
}

std::vector<ExperimentRow> experiment_mask_robustness(const ModelParams<float>& model,
                                                      const DeskContext& ctx,
                                                      const std::vector<int64_t>& kernels,
                                                      int64_t cluster_k) {
  std::vector<ExperimentRow> rows;
  const uint64_t seed = ctx.train_cfg.seed;
  auto ids = clustered_prompt_ids(model, ctx, cluster_k, seed);
  append_report(rows, "baseline",
                evaluate_context(model, ctx, filters_from_ids(model, ctx, ids), seed));
  for (int64_t k : kernels) {
    auto dil = filters_from_ids(model, ctx, ids,
                                [k](const TensorPtr<float>& m) { return dilate_mask(m, k); });
    append_report(rows, "dilate_k" + std::to_string(k),
                  evaluate_context(model, ctx, dil, seed));
    auto ero = filters_from_ids(model, ctx, ids,
                                [k](const TensorPtr<float>& m) { return erode_mask(m, k); });
    append_report(rows, "erode_k" + std::to_string(k),
                  evaluate_context(model, ctx, ero, seed));
  }
  return rows;
}

std::vector<ExperimentRow> experiment_continual(ModelParams<float>& model,
                                                const DeskContext& ctx,
                                                const ContinualOptions& options,
                                                double* trainable_fraction_out,
                                                const StageCallback& on_stage) {
  std::vector<ExperimentRow> rows;
  const uint64_t seed = ctx.train_cfg.seed;

  auto eval_all = [&](const std::string& stage) {
    auto filters =
        filters_from_ids(model, ctx, clustered_prompt_ids(model, ctx, options.cluster_k, seed));
    append_report(rows, stage, evaluate_context(model, ctx, filters, seed));
  };

  eval_all("pretrain");
  if (on_stage) on_stage("pretrain", model);

  // budget check happens on the frozen model before any fine-tuning
  const double fraction = freeze_except(model, {"dec.fuse0.", "ps."});
  if (trainable_fraction_out) *trainable_fraction_out = fraction;
  if (fraction >= options.max_trainable_fraction) {
    unfreeze_all(model);
    throw ConfigError("continual trainable fraction " + std::to_string(fraction) +
                      " exceeds the budget of " +
                      std::to_string(options.max_trainable_fraction) +
                      "; size the model accordingly");
  }

  int stage_index = 0;
  for (const auto& task : options.new_tasks) {
    TrainConfig ft = ctx.train_cfg;
    ft.tasks = {task};
    ft.epochs = options.epochs;
    ft.lr = options.lr;
    ft.seed = seed + 101 * (++stage_index);
    ft.freeze_bn = true;
    std::vector<TaskTensors<float>> data{ctx.tensors[ctx.task_index(task)]};
    run_training(model, data, ft);
    const std::string stage = "ft_" + task;
    eval_all(stage);
    if (on_stage) on_stage(stage, model);
  }

  unfreeze_all(model);
  return rows;
}

}  // namespace spider
