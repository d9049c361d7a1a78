#ifndef SPIDER_KMEANS_HPP
#define SPIDER_KMEANS_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace spider {

// Pooled embeddings for one task's samples.
struct EmbeddingIndex {
  std::string task_id;
  std::vector<std::vector<double>> points;
  std::vector<int64_t> sample_ids;
};

struct KmeansResult {
  std::vector<std::vector<double>> centers;
  std::vector<int64_t> assignments;
  std::vector<double> distortion_history;  // after each assignment step
  int64_t iterations = 0;
};

// Lloyd iterations with squared-Euclidean distance (or 1 - cosine when
// `cosine` is set). Initial centers are K distinct points drawn by the seeded
// RNG; assignment ties break toward the lowest center index; an empty cluster
// is reseeded to the point farthest from its current center.
KmeansResult kmeans(const std::vector<std::vector<double>>& points, int64_t k,
                    uint64_t seed, int64_t max_iters = 100, double tol = 1e-6,
                    bool cosine = false);

// One sample per cluster, the one closest to its center; ties break toward the
// lowest sample index.
std::vector<int64_t> select_representatives(const EmbeddingIndex& index, int64_t k,
                                            uint64_t seed, bool cosine = false);

// Uniform sample of G identifiers without replacement.
std::vector<int64_t> random_prompts(int64_t dataset_size, int64_t g, uint64_t seed);

}  // namespace spider

#endif
