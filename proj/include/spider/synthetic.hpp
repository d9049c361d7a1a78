#ifndef SPIDER_SYNTHETIC_HPP
#define SPIDER_SYNTHETIC_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spider/tensor.hpp"

namespace spider {

// The four context-dependent concepts. Each is recoverable only from the
// relationship between a region and its surroundings, not from absolute
// appearance.
enum class Concept { Bright, Dark, Texture, Edge };

const std::vector<Concept>& all_concepts();
std::string concept_name(Concept c);
Concept concept_from_name(const std::string& name);

struct SceneSample {
  TensorPtr<float> image;                      // [3, H, W] in [0,1]
  std::map<Concept, TensorPtr<float>> masks;   // binary [1, H, W] per concept
  uint64_t seed = 0;
};

struct GeneratorParams {
  int64_t canvas = 48;
  // radius >= 6 keeps every mask visible to the stride-8 feature grid after
  // bilinear downsampling (a radius-6 disk always contains an 8-spaced point)
  double radius_lo = 6.0, radius_hi = 13.0;
  double lum_lo = 0.42, lum_hi = 0.54;
  double channel_jitter = 0.04;
  double field_amp = 0.02;        // smooth luminance variation across the canvas
  double noise_amp = 0.02;        // per-pixel per-channel
  double bright_delta_lo = 0.35, bright_delta_hi = 0.40;
  double dark_factor_lo = 0.10, dark_factor_hi = 0.20;
  double texture_amp_lo = 0.10, texture_amp_hi = 0.16;
  double edge_contrast_lo = 0.15, edge_contrast_hi = 0.22;
  double min_area_frac = 0.04, max_area_frac = 0.40;
  double max_overlap_frac = 0.10;  // of either mask's area
};

struct TaskConfig {
  Concept task = Concept::Bright;
  GeneratorParams gen;
  int64_t n_train = 64;
  int64_t n_test = 32;
  uint64_t seed = 1;
};

struct TaskDataset {
  TaskConfig config;
  std::vector<SceneSample> train;
  std::vector<SceneSample> test;
};

// Deterministic in (seed, params, concepts). Throws DataError when a
// non-overlapping placement cannot be found in 100 attempts.
SceneSample generate_scene(uint64_t seed, const std::vector<Concept>& concepts,
                           const GeneratorParams& params = {});

// Single-concept scenes; train and test draw from disjoint seed ranges.
TaskDataset make_dataset(const TaskConfig& config);

// Morphological max / min filter with a k x k square element, zero-padded.
TensorPtr<float> dilate_mask(const TensorPtr<float>& mask, int64_t k);
TensorPtr<float> erode_mask(const TensorPtr<float>& mask, int64_t k);

}  // namespace spider

#endif
