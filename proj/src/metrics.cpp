#include "spider/metrics.hpp"

#include <cmath>

#include "spider/ops.hpp"

namespace spider {

Metrics metrics(const TensorPtr<float>& pred, const TensorPtr<float>& gt) {
  if (pred->shape() != gt->shape())
    throw DimensionError("metrics shape mismatch: " + shape_str(pred->shape()) + " vs " +
                         shape_str(gt->shape()));
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
  double abs_err = 0;
  const int64_t n = pred->numel();
  for (int64_t i = 0; i < n; ++i) {
    const float p = pred->data()[i];
    if (p < 0.0f || p > 1.0f) throw ContractError("metrics prediction outside [0,1]");
    const bool pb = p > 0.5f;
    const bool gb = gt->data()[i] > 0.5f;
    abs_err += std::abs(static_cast<double>(p) - static_cast<double>(gt->data()[i]));
    if (pb && gb) ++tp;
    else if (pb && !gb) ++fp;
    else if (!pb && gb) ++fn;
    else ++tn;
  }
  Metrics m;
  const int64_t P = tp + fp, G = tp + fn;
  m.dice = (P + G == 0) ? 1.0 : 2.0 * tp / static_cast<double>(P + G);
  const int64_t uni = tp + fp + fn;
  m.iou = (uni == 0) ? 1.0 : tp / static_cast<double>(uni);
  m.mae = abs_err / static_cast<double>(n);
  const double fg_err = (tp + fn) > 0 ? fn / static_cast<double>(tp + fn) : 0.0;
  const double bg_err = (tn + fp) > 0 ? fp / static_cast<double>(tn + fp) : 0.0;
  m.ber = 0.5 * (fg_err + bg_err);
  return m;
}

double MetricReport::get(const std::string& task, const std::string& metric) const {
  for (const auto& r : rows)
    if (r.task == task && r.metric == metric) return r.value;
  throw DataError("metric report has no entry for (" + task + ", " + metric + ")");
}

double MetricReport::mean(const std::string& metric) const {
  double sum = 0;
  int64_t count = 0;
  for (const auto& r : rows)
    if (r.metric == metric) {
      sum += r.value;
      ++count;
    }
  if (count == 0) throw DataError("metric report has no '" + metric + "' entries");
  return sum / static_cast<double>(count);
}

TensorPtr<float> predict(const ModelParams<float>& model, const TensorPtr<float>& image,
                         const ConceptFilter<float>& filter) {
  NoGradGuard ng;
  const int64_t H = image->dim(1), W = image->dim(2);
  auto batch = make_tensor<float>({1, 3, H, W}, image->vec());
  auto pyramid = encode(batch, model.encoder, ForwardMode{false, false});
  auto f = decode(pyramid, model.decoder);
  auto logits = dynamic_head(f, filter, H, W);
  auto prob = ops::sigmoid(logits);
  return make_tensor<float>({1, H, W}, prob->vec());
}

MetricReport evaluate(const ModelParams<float>& model,
                      const std::map<std::string, ConceptFilter<float>>& filters,
                      const std::vector<const TaskDataset*>& test_sets, uint64_t seed,
                      const std::string& config_digest) {
  MetricReport report;
  for (const TaskDataset* ds : test_sets) {
    const std::string task = concept_name(ds->config.task);
    auto it = filters.find(task);
    if (it == filters.end())
      throw ConfigError("no concept filter provided for task '" + task + "'");
    double dice = 0, iou = 0, mae = 0, ber = 0;
    for (const auto& sample : ds->test) {
      auto pred = predict(model, sample.image, it->second);
      const Metrics m = metrics(pred, sample.masks.at(ds->config.task));
      dice += m.dice;
      iou += m.iou;
      mae += m.mae;
      ber += m.ber;
    }
    const auto count = static_cast<int64_t>(ds->test.size());
    const double inv = count > 0 ? 1.0 / count : 0.0;
    for (const auto& [name, value] :
         std::vector<std::pair<std::string, double>>{{"dice", dice * inv},
                                                     {"iou", iou * inv},
                                                     {"mae", mae * inv},
                                                     {"ber", ber * inv}})
      report.rows.push_back(MetricRow{task, name, value, count, seed, config_digest});
  }
  return report;
}

}  // namespace spider
