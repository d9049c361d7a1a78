#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "spider/kmeans.hpp"
#include "spider/errors.hpp"
#include "spider/rng.hpp"

using namespace spider;

TEST_CASE("kmeans: n == k gives zero distortion") {
  std::vector<std::vector<double>> pts{{0, 0}, {1, 1}, {5, 5}, {9, 0}};
  auto res = kmeans(pts, 4, 1);
  CHECK(res.distortion_history.back() == doctest::Approx(0.0));
  std::vector<int64_t> seen = res.assignments;
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("kmeans: all points identical is fine") {
  std::vector<std::vector<double>> pts(10, std::vector<double>{3.0, 3.0});
  auto res = kmeans(pts, 3, 7);
  for (int64_t a : res.assignments) {
    CHECK(a >= 0);
    CHECK(a < 3);
  }
  CHECK(res.distortion_history.back() == doctest::Approx(0.0));
}

TEST_CASE("kmeans: 1-D {0,1,10,11} with K=2 finds centers {0.5, 10.5}") {
  std::vector<std::vector<double>> pts{{0}, {1}, {10}, {11}};
  for (uint64_t seed = 0; seed < 8; ++seed) {
    auto res = kmeans(pts, 2, seed);
    std::vector<double> centers{res.centers[0][0], res.centers[1][0]};
    std::sort(centers.begin(), centers.end());
    CHECK(centers[0] == doctest::Approx(0.5));
    CHECK(centers[1] == doctest::Approx(10.5));
  }
}

TEST_CASE("kmeans distortion is non-increasing across Lloyd iterations") {
  Rng rng(5);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(8);
    for (double& v : p) v = rng.uniform(-5, 5);
    pts.push_back(p);
  }
  auto res = kmeans(pts, 12, 3);
  for (size_t i = 1; i < res.distortion_history.size(); ++i)
    CHECK(res.distortion_history[i] <= res.distortion_history[i - 1] + 1e-9);
}

TEST_CASE("kmeans rejects n < k") {
  std::vector<std::vector<double>> pts{{0}, {1}};
  CHECK_THROWS_AS(kmeans(pts, 3, 1), DataError);
}

TEST_CASE("select_representatives: identity at K=n, valid subset otherwise") {
  EmbeddingIndex index;
  index.task_id = "BRIGHT";
  Rng rng(9);
  for (int i = 0; i < 16; ++i) {
    std::vector<double> p(4);
    for (double& v : p) v = rng.uniform(-1, 1);
    index.points.push_back(p);
    index.sample_ids.push_back(i);
  }
  auto all = select_representatives(index, 16, 2);
  REQUIRE(all.size() == 16);
  for (int i = 0; i < 16; ++i) CHECK(all[i] == i);

  auto some = select_representatives(index, 5, 2);
  CHECK(some.size() == 5);
  std::vector<int64_t> sorted = some;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  for (int64_t id : some) {
    CHECK(id >= 0);
    CHECK(id < 16);
  }

  // deterministic in the seed
  auto again = select_representatives(index, 5, 2);
  CHECK(some == again);
}

TEST_CASE("select_representatives on a 64-sample task returns 8 stable picks") {
  EmbeddingIndex index;
  index.task_id = "TEXTURE";
  Rng rng(13);
  for (int i = 0; i < 64; ++i) {
    std::vector<double> p(16);
    for (double& v : p) v = rng.uniform(0, 1);
    index.points.push_back(p);
    index.sample_ids.push_back(i);
  }
  auto a = select_representatives(index, 8, 11);
  auto b = select_representatives(index, 8, 11);
  CHECK(a == b);
  CHECK(a.size() == 8);
  std::vector<int64_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("random_prompts: permutation at G=n, bounds, determinism, errors") {
  auto perm = random_prompts(6, 6, 3);
  std::vector<int64_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 6; ++i) CHECK(sorted[i] == i);

  auto one = random_prompts(10, 1, 5);
  REQUIRE(one.size() == 1);
  CHECK(one[0] >= 0);
  CHECK(one[0] < 10);

  CHECK(random_prompts(64, 8, 17) == random_prompts(64, 8, 17));
  CHECK(random_prompts(64, 8, 17) != random_prompts(64, 8, 18));

  CHECK_THROWS_AS(random_prompts(4, 5, 1), DataError);
}

TEST_CASE("cosine flag changes the metric but keeps the contract") {
  std::vector<std::vector<double>> pts{{1, 0}, {2, 0}, {0, 1}, {0, 3}};
  auto res = kmeans(pts, 2, 1, 100, 1e-6, /*cosine=*/true);
  // cosine distance ignores magnitude: colinear points cluster together
  CHECK(res.assignments[0] == res.assignments[1]);
  CHECK(res.assignments[2] == res.assignments[3]);
  CHECK(res.assignments[0] != res.assignments[2]);
}
