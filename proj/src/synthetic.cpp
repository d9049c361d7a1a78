#include "spider/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "spider/errors.hpp"
#include "spider/rng.hpp"

namespace spider {

const std::vector<Concept>& all_concepts() {
  static const std::vector<Concept> v{Concept::Bright, Concept::Dark,
                                      Concept::Texture, Concept::Edge};
  return v;
}

std::string concept_name(Concept c) {
  switch (c) {
    case Concept::Bright: return "BRIGHT";
    case Concept::Dark: return "DARK";
    case Concept::Texture: return "TEXTURE";
    case Concept::Edge: return "EDGE";
  }
  throw ContractError("unknown concept");
}

Concept concept_from_name(const std::string& name) {
  for (Concept c : all_concepts())
    if (concept_name(c) == name) return c;
  throw ConfigError("unknown task id '" + name + "'");
}

namespace {

struct Ellipse {
  double cx, cy, rx, ry, theta;
};

// binary mask of the (rotated) ellipse interior
std::vector<uint8_t> rasterize(const Ellipse& e, int64_t n) {
  std::vector<uint8_t> m(static_cast<size_t>(n * n), 0);
  const double ct = std::cos(e.theta), st = std::sin(e.theta);
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      const double dx = x - e.cx, dy = y - e.cy;
      const double u = (dx * ct + dy * st) / e.rx;
      const double v = (-dx * st + dy * ct) / e.ry;
      if (u * u + v * v <= 1.0) m[y * n + x] = 1;
    }
  return m;
}

int64_t mask_area(const std::vector<uint8_t>& m) {
  int64_t a = 0;
  for (uint8_t v : m) a += v;
  return a;
}

int64_t overlap_area(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  int64_t o = 0;
  for (size_t i = 0; i < a.size(); ++i) o += a[i] & b[i];
  return o;
}

// interior boundary: pixels of the mask with a non-mask 4-neighbour
std::vector<uint8_t> boundary_ring(const std::vector<uint8_t>& m, int64_t n) {
  std::vector<uint8_t> ring(m.size(), 0);
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      if (!m[y * n + x]) continue;
      const bool edge = (y == 0 || !m[(y - 1) * n + x]) || (y == n - 1 || !m[(y + 1) * n + x]) ||
                        (x == 0 || !m[y * n + x - 1]) || (x == n - 1 || !m[y * n + x + 1]);
      if (edge) ring[y * n + x] = 1;
    }
  return ring;
}

}  // namespace

SceneSample generate_scene(uint64_t seed, const std::vector<Concept>& concepts,
                           const GeneratorParams& gp) {
  if (concepts.empty()) throw ContractError("generate_scene needs at least one concept");
  const int64_t n = gp.canvas;
  Rng rng(seed ^ 0x5343454e45ULL);

  // background: smooth luminance field from four corner offsets, a random
  // base color, and mild per-pixel noise
  const double lum = rng.uniform(gp.lum_lo, gp.lum_hi);
  double base[3];
  for (double& b : base) b = lum + rng.uniform(-gp.channel_jitter, gp.channel_jitter);
  double corner[4];
  for (double& c : corner) c = rng.uniform(-gp.field_amp, gp.field_amp);

  auto image = make_tensor<float>({3, n, n});
  std::vector<double> field(static_cast<size_t>(n * n));
  for (int64_t y = 0; y < n; ++y) {
    const double fy = n > 1 ? static_cast<double>(y) / (n - 1) : 0.0;
    for (int64_t x = 0; x < n; ++x) {
      const double fx = n > 1 ? static_cast<double>(x) / (n - 1) : 0.0;
      field[y * n + x] = (1 - fy) * ((1 - fx) * corner[0] + fx * corner[1]) +
                         fy * ((1 - fx) * corner[2] + fx * corner[3]);
    }
  }
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t p = 0; p < n * n; ++p)
      image->data()[c * n * n + p] = static_cast<float>(
          base[c] + field[p] + rng.uniform(-gp.noise_amp, gp.noise_amp));

  // place concepts in canonical order with rejection sampling
  const int64_t min_area = static_cast<int64_t>(gp.min_area_frac * n * n);
  const int64_t max_area = static_cast<int64_t>(gp.max_area_frac * n * n);
  std::vector<Concept> order;
  for (Concept c : all_concepts())
    if (std::find(concepts.begin(), concepts.end(), c) != concepts.end()) order.push_back(c);
  if (order.size() != concepts.size())
    throw ContractError("generate_scene got a duplicate or unknown concept");

  std::map<Concept, std::vector<uint8_t>> placed;
  for (Concept c : order) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      Ellipse e;
      e.rx = rng.uniform(gp.radius_lo, gp.radius_hi);
      e.ry = rng.uniform(gp.radius_lo, gp.radius_hi);
      e.theta = rng.uniform(0.0, 3.14159265358979323846);
      const double margin = std::max(e.rx, e.ry) + 2.0;
      if (2 * margin >= n - 1) continue;
      e.cx = rng.uniform(margin, n - 1 - margin);
      e.cy = rng.uniform(margin, n - 1 - margin);
      auto m = rasterize(e, n);
      const int64_t area = mask_area(m);
      if (area < min_area || area > max_area) continue;
      bool clash = false;
      for (const auto& [other, om] : placed) {
        const int64_t ov = overlap_area(m, om);
        if (ov >= static_cast<int64_t>(gp.max_overlap_frac * area) ||
            ov >= static_cast<int64_t>(gp.max_overlap_frac * mask_area(om)))
          clash = true;
      }
      if (clash) continue;
      placed[c] = std::move(m);
      ok = true;
    }
    if (!ok)
      throw DataError("scene generation failed: no feasible placement for " +
                      concept_name(c) + " after 100 attempts (seed " +
                      std::to_string(seed) + ")");
  }

  // paint each concept relative to the underlying content
  for (Concept c : order) {
    const auto& m = placed[c];
    switch (c) {
      case Concept::Bright: {
        const double delta = rng.uniform(gp.bright_delta_lo, gp.bright_delta_hi);
        for (int64_t ch = 0; ch < 3; ++ch)
          for (int64_t p = 0; p < n * n; ++p)
            if (m[p]) image->data()[ch * n * n + p] += static_cast<float>(delta);
        break;
      }
      case Concept::Dark: {
        const double factor = rng.uniform(gp.dark_factor_lo, gp.dark_factor_hi);
        for (int64_t ch = 0; ch < 3; ++ch)
          for (int64_t p = 0; p < n * n; ++p)
            if (m[p]) image->data()[ch * n * n + p] *= static_cast<float>(factor);
        break;
      }
      case Concept::Texture: {
        const double amp = rng.uniform(gp.texture_amp_lo, gp.texture_amp_hi);
        const int64_t cell = rng.bernoulli(0.5) ? 1 : 2;
        const int64_t phase = static_cast<int64_t>(rng.uniform_int(2));
        for (int64_t y = 0; y < n; ++y)
          for (int64_t x = 0; x < n; ++x) {
            const int64_t p = y * n + x;
            if (!m[p]) continue;
            const double sign = ((y / cell + x / cell + phase) % 2 == 0) ? 1.0 : -1.0;
            for (int64_t ch = 0; ch < 3; ++ch)
              image->data()[ch * n * n + p] += static_cast<float>(sign * amp);
          }
        break;
      }
      case Concept::Edge: {
        const double contrast = rng.uniform(gp.edge_contrast_lo, gp.edge_contrast_hi);
        const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        // interior stays within the 0.03 match-background envelope
        const double tint = rng.uniform(-0.025, 0.025);
        auto ring = boundary_ring(m, n);
        for (int64_t p = 0; p < n * n; ++p) {
          if (ring[p]) {
            for (int64_t ch = 0; ch < 3; ++ch)
              image->data()[ch * n * n + p] += static_cast<float>(sign * contrast);
          } else if (m[p]) {
            for (int64_t ch = 0; ch < 3; ++ch)
              image->data()[ch * n * n + p] += static_cast<float>(tint);
          }
        }
        break;
      }
    }
  }

  for (int64_t i = 0; i < image->numel(); ++i)
    image->data()[i] = std::clamp(image->data()[i], 0.0f, 1.0f);

  SceneSample sample;
  sample.image = image;
  sample.seed = seed;
  for (Concept c : order) {
    auto mask = make_tensor<float>({1, n, n});
    const auto& m = placed[c];
    for (int64_t p = 0; p < n * n; ++p) mask->data()[p] = m[p] ? 1.0f : 0.0f;
    sample.masks[c] = mask;
  }
  return sample;
}

TaskDataset make_dataset(const TaskConfig& config) {
  if (config.n_train < 1 || config.n_test < 1)
    throw ContractError("make_dataset needs n_train, n_test >= 1");
  TaskDataset ds;
  ds.config = config;
  // disjoint seed ranges keyed by (seed, task)
  const uint64_t base =
      Rng(config.seed).derive(0x7461736bULL + static_cast<uint64_t>(config.task)).next_u64();
  const std::vector<Concept> only{config.task};
  for (int64_t i = 0; i < config.n_train; ++i)
    ds.train.push_back(generate_scene(base + static_cast<uint64_t>(i), only, config.gen));
  for (int64_t i = 0; i < config.n_test; ++i)
    ds.test.push_back(
        generate_scene(base + static_cast<uint64_t>(config.n_train + i), only, config.gen));
  return ds;
}

namespace {

TensorPtr<float> morph(const TensorPtr<float>& mask, int64_t k, bool is_max) {
  if (k % 2 == 0) throw ContractError("morphology kernel must be odd, got " + std::to_string(k));
  if (mask->rank() != 3 || mask->dim(0) != 1)
    throw DimensionError("morphology expects [1,H,W], got " + shape_str(mask->shape()));
  for (int64_t i = 0; i < mask->numel(); ++i) {
    const float v = mask->data()[i];
    if (v != 0.0f && v != 1.0f)
      throw ContractError("morphology expects a binary mask");
  }
  const int64_t H = mask->dim(1), W = mask->dim(2), r = k / 2;
  auto out = make_tensor<float>(mask->shape());
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      float best = is_max ? 0.0f : 1.0f;
      for (int64_t dy = -r; dy <= r; ++dy)
        for (int64_t dx = -r; dx <= r; ++dx) {
          const int64_t iy = y + dy, ix = x + dx;
          const float v =
              (iy >= 0 && iy < H && ix >= 0 && ix < W) ? mask->data()[iy * W + ix] : 0.0f;
          best = is_max ? std::max(best, v) : std::min(best, v);
        }
      out->data()[y * W + x] = best;
    }
  return out;
}

}  // namespace

TensorPtr<float> dilate_mask(const TensorPtr<float>& mask, int64_t k) {
  return morph(mask, k, true);
}

TensorPtr<float> erode_mask(const TensorPtr<float>& mask, int64_t k) {
  return morph(mask, k, false);
}

}  // namespace spider
