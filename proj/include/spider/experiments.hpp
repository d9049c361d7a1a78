#ifndef SPIDER_EXPERIMENTS_HPP
#define SPIDER_EXPERIMENTS_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "spider/kmeans.hpp"
#include "spider/metrics.hpp"
#include "spider/train.hpp"

namespace spider {

// Everything the experiment drivers need about one desk-scale setup:
// materialized datasets, their stacked train tensors, and the base configs.
struct DeskContext {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  std::vector<TaskConfig> task_cfgs;
  std::vector<TaskDataset> datasets;
  std::vector<TaskTensors<float>> tensors;  // train splits
  std::string digest;

  int64_t task_index(const std::string& task_id) const;
};

DeskContext make_context(const ModelConfig& mc, const TrainConfig& tc,
                         const std::vector<TaskConfig>& task_cfgs,
                         const std::string& digest);

// Fresh model trained on a subset of the context's tasks.
ModelParams<float> train_fresh(const DeskContext& ctx, const std::vector<std::string>& tasks,
                               Strategy strategy, int64_t epochs, uint64_t seed,
                               LossCurve* curve_out = nullptr);

// Group prompt assembled from train-split sample ids; fg masks can be
// transformed (dilation/erosion) before the complement is taken.
using MaskTransform = std::function<TensorPtr<float>(const TensorPtr<float>&)>;
GroupPrompt<float> prompt_from_ids(const DeskContext& ctx, int64_t task_index,
                                   const std::vector<int64_t>& ids,
                                   const MaskTransform& transform = {});

// Pooled-embedding index of a task's train split under the given model.
EmbeddingIndex embedding_index(const ModelParams<float>& model, const DeskContext& ctx,
                               int64_t task_index);

std::map<std::string, std::vector<int64_t>> clustered_prompt_ids(
    const ModelParams<float>& model, const DeskContext& ctx, int64_t k, uint64_t seed);

std::map<std::string, ConceptFilter<float>> filters_from_ids(
    const ModelParams<float>& model, const DeskContext& ctx,
    const std::map<std::string, std::vector<int64_t>>& ids,
    const MaskTransform& transform = {});

std::map<std::string, ConceptFilter<float>> random_filters(
    const ModelParams<float>& model, const DeskContext& ctx, int64_t g, uint64_t seed);

MetricReport evaluate_context(const ModelParams<float>& model, const DeskContext& ctx,
                              const std::map<std::string, ConceptFilter<float>>& filters,
                              uint64_t seed);

struct ExperimentRow {
  std::string variant;
  MetricRow row;
};

// Joint model on all tasks vs one model per task, matched iteration budgets.
std::vector<ExperimentRow> experiment_joint_vs_separate(const DeskContext& ctx,
                                                        int64_t epochs,
                                                        const std::vector<uint64_t>& seeds);

// The three forward/backward strategies at a matched budget.
std::vector<ExperimentRow> experiment_strategies(const DeskContext& ctx, int64_t epochs,
                                                 const std::vector<uint64_t>& seeds);

// Filters built from G random prompts (several seeds) and from K clustered
// prompts, all evaluated on the trained model.
std::vector<ExperimentRow> experiment_prompt_count(const ModelParams<float>& model,
                                                   const DeskContext& ctx,
                                                   const std::vector<int64_t>& g_list,
                                                   const std::vector<uint64_t>& seeds,
                                                   int64_t cluster_k);

// Prompt-mask dilation/erosion robustness; ground truth stays untouched.
std::vector<ExperimentRow> experiment_mask_robustness(const ModelParams<float>& model,
                                                      const DeskContext& ctx,
                                                      const std::vector<int64_t>& kernels,
                                                      int64_t cluster_k);

struct ContinualOptions {
  std::vector<std::string> new_tasks;  // fine-tuned sequentially
  int64_t epochs = 12;
  double lr = 1e-3;
  int64_t cluster_k = 8;
  double max_trainable_fraction = 0.01;
};

// Called after the pretrain evaluation and after each fine-tune stage.
using StageCallback =
    std::function<void(const std::string& stage, const ModelParams<float>& model)>;

// Sequential fine-tuning of the decoder's final fusion conv plus the prompt
// stream. Evaluates every task at every stage (zero-shot for tasks not yet
// fine-tuned). Throws ConfigError when the trainable fraction exceeds the
// budget. The model is left with all parameters unfrozen.
std::vector<ExperimentRow> experiment_continual(ModelParams<float>& model,
                                                const DeskContext& ctx,
                                                const ContinualOptions& options,
                                                double* trainable_fraction_out = nullptr,
                                                const StageCallback& on_stage = {});

}  // namespace spider

#endif
