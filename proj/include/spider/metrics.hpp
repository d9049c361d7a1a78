#ifndef SPIDER_METRICS_HPP
#define SPIDER_METRICS_HPP

#include <map>
#include <string>
#include <vector>

#include "spider/filter.hpp"
#include "spider/model.hpp"
#include "spider/synthetic.hpp"

namespace spider {

struct Metrics {
  double dice = 0, iou = 0, mae = 0, ber = 0;
};

// pred holds probabilities in [0,1]; gt is binary. Predictions binarize at
// 0.5 for dice/iou/ber; mae uses the soft prediction. Empty-vs-empty counts
// as perfect overlap; an absent class contributes zero error to BER.
Metrics metrics(const TensorPtr<float>& pred, const TensorPtr<float>& gt);

struct MetricRow {
  std::string task;
  std::string metric;
  double value = 0;
  int64_t n = 0;
  uint64_t seed = 0;
  std::string config_digest;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  double get(const std::string& task, const std::string& metric) const;
  double mean(const std::string& metric) const;  // over tasks
};

// Single-image inference: encoder/decoder in eval mode, dynamic head, sigmoid.
TensorPtr<float> predict(const ModelParams<float>& model, const TensorPtr<float>& image,
                         const ConceptFilter<float>& filter);

// Per-task mean metrics over the test split.
MetricReport evaluate(const ModelParams<float>& model,
                      const std::map<std::string, ConceptFilter<float>>& filters,
                      const std::vector<const TaskDataset*>& test_sets, uint64_t seed,
                      const std::string& config_digest);

}  // namespace spider

#endif
