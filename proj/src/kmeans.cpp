#include "spider/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spider/errors.hpp"
#include "spider/rng.hpp"

namespace spider {

namespace {

double sq_euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

double cosine_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  if (denom < 1e-300) return 1.0;
  return 1.0 - dot / denom;
}

}  // namespace

KmeansResult kmeans(const std::vector<std::vector<double>>& points, int64_t k,
                    uint64_t seed, int64_t max_iters, double tol, bool cosine) {
  const int64_t n = static_cast<int64_t>(points.size());
  if (k < 1) throw DataError("kmeans needs k >= 1");
  if (n < k)
    throw DataError("kmeans needs n >= k, got n=" + std::to_string(n) +
                    " k=" + std::to_string(k));
  const size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim) throw DataError("kmeans points have inconsistent dimension");

  auto dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
    return cosine ? cosine_dist(a, b) : sq_euclid(a, b);
  };

  // initial centers: k distinct points chosen uniformly
  Rng rng = Rng(seed).derive(0x6b6d65616e73ULL);
  std::vector<int64_t> idx(n);
  for (int64_t i = 0; i < n; ++i) idx[i] = i;
  for (int64_t i = 0; i < k; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  KmeansResult res;
  res.centers.reserve(static_cast<size_t>(k));
  for (int64_t c = 0; c < k; ++c) res.centers.push_back(points[idx[c]]);
  res.assignments.assign(static_cast<size_t>(n), 0);

  for (int64_t iter = 0; iter < max_iters; ++iter) {
    // assignment (ties to the lowest center index)
    double distortion = 0;
    for (int64_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int64_t bc = 0;
      for (int64_t c = 0; c < k; ++c) {
        const double d = dist(points[i], res.centers[c]);
        if (d < best) {
          best = d;
          bc = c;
        }
      }
      res.assignments[i] = bc;
      distortion += best;
    }

    // reseed empty clusters from their farthest members
    std::vector<int64_t> counts(static_cast<size_t>(k), 0);
    for (int64_t a : res.assignments) ++counts[a];
    for (int64_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      double far_d = -1;
      int64_t far_i = -1;
      for (int64_t i = 0; i < n; ++i) {
        if (counts[res.assignments[i]] <= 1) continue;  // keep donors non-empty
        const double d = dist(points[i], res.centers[res.assignments[i]]);
        if (d > far_d) {
          far_d = d;
          far_i = i;
        }
      }
      if (far_i < 0) continue;  // all occupied clusters are singletons
      --counts[res.assignments[far_i]];
      res.assignments[far_i] = c;
      counts[c] = 1;
      res.centers[c] = points[far_i];
    }
    res.distortion_history.push_back(distortion);
    res.iterations = iter + 1;

    // update step
    std::vector<std::vector<double>> next(static_cast<size_t>(k),
                                          std::vector<double>(dim, 0.0));
    std::fill(counts.begin(), counts.end(), 0);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t c = res.assignments[i];
      ++counts[c];
      for (size_t d = 0; d < dim; ++d) next[c][d] += points[i][d];
    }
    double shift = 0;
    for (int64_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (size_t d = 0; d < dim; ++d) next[c][d] /= static_cast<double>(counts[c]);
      shift = std::max(shift, sq_euclid(next[c], res.centers[c]));
      res.centers[c] = std::move(next[c]);
    }
    if (std::sqrt(shift) < tol) break;
  }

  // final assignment so centers and labels are consistent on return
  double distortion = 0;
  for (int64_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int64_t bc = 0;
    for (int64_t c = 0; c < k; ++c) {
      const double d = dist(points[i], res.centers[c]);
      if (d < best) {
        best = d;
        bc = c;
      }
    }
    res.assignments[i] = bc;
    distortion += best;
  }
  res.distortion_history.push_back(distortion);
  return res;
}

std::vector<int64_t> select_representatives(const EmbeddingIndex& index, int64_t k,
                                            uint64_t seed, bool cosine) {
  const int64_t n = static_cast<int64_t>(index.points.size());
  if (index.sample_ids.size() != index.points.size())
    throw DataError("embedding index ids do not match points");
  auto res = kmeans(index.points, k, seed, 100, 1e-6, cosine);
  auto dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0;
    if (cosine) {
      double dot = 0, na = 0, nb = 0;
      for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      const double denom = std::sqrt(na) * std::sqrt(nb);
      return denom < 1e-300 ? 1.0 : 1.0 - dot / denom;
    }
    for (size_t i = 0; i < a.size(); ++i) {
      const double t = a[i] - b[i];
      d += t * t;
    }
    return d;
  };
  std::vector<int64_t> picks;
  for (int64_t c = 0; c < k; ++c) {
    double best = std::numeric_limits<double>::infinity();
    int64_t best_i = -1;
    for (int64_t i = 0; i < n; ++i) {
      if (res.assignments[i] != c) continue;
      const double d = dist(index.points[i], res.centers[c]);
      if (d < best || (d == best && best_i >= 0 &&
                       index.sample_ids[i] < index.sample_ids[best_i])) {
        best = d;
        best_i = i;
      }
    }
    if (best_i >= 0) picks.push_back(index.sample_ids[best_i]);
  }
  std::sort(picks.begin(), picks.end());
  return picks;
}

std::vector<int64_t> random_prompts(int64_t dataset_size, int64_t g, uint64_t seed) {
  if (dataset_size < g)
    throw DataError("random_prompts needs dataset size >= G, got " +
                    std::to_string(dataset_size) + " < " + std::to_string(g));
  Rng rng = Rng(seed).derive(0x70726f6d7073ULL);
  std::vector<int64_t> idx(dataset_size);
  for (int64_t i = 0; i < dataset_size; ++i) idx[i] = i;
  for (int64_t i = 0; i < g; ++i) {
    const int64_t j =
        i + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(dataset_size - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(static_cast<size_t>(g));
  return idx;
}

}  // namespace spider
