#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "spider/metrics.hpp"
#include "spider/rng.hpp"

using namespace spider;

TEST_CASE("metrics: perfect prediction") {
  auto gt = make_tensor<float>({1, 4, 4});
  for (int64_t i = 0; i < 8; ++i) gt->data()[i] = 1.0f;
  auto m = metrics(gt, gt);
  CHECK(m.dice == doctest::Approx(1.0));
  CHECK(m.iou == doctest::Approx(1.0));
  CHECK(m.mae == doctest::Approx(0.0));
  CHECK(m.ber == doctest::Approx(0.0));
}

TEST_CASE("metrics: inverted prediction") {
  auto gt = make_tensor<float>({1, 4, 4});
  for (int64_t i = 0; i < 8; ++i) gt->data()[i] = 1.0f;
  auto pred = make_tensor<float>({1, 4, 4});
  for (int64_t i = 0; i < 16; ++i) pred->data()[i] = 1.0f - gt->data()[i];
  auto m = metrics(pred, gt);
  CHECK(m.dice == doctest::Approx(0.0));
  CHECK(m.ber == doctest::Approx(1.0));
  CHECK(m.mae == doctest::Approx(1.0));
}

TEST_CASE("metrics: equal-area half overlap gives dice 1/2 and iou 1/3") {
  // |P| = |G| = 8, |P ∩ G| = 4
  auto gt = make_tensor<float>({1, 4, 8});
  auto pred = make_tensor<float>({1, 4, 8});
  for (int64_t i = 0; i < 8; ++i) gt->data()[i] = 1.0f;        // first 8 cells
  for (int64_t i = 4; i < 12; ++i) pred->data()[i] = 1.0f;     // shifted by 4
  auto m = metrics(pred, gt);
  CHECK(m.dice == doctest::Approx(0.5));
  CHECK(m.iou == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("metrics: empty-vs-empty conventions") {
  auto zero = make_tensor<float>({1, 3, 3});
  auto m = metrics(zero, zero);
  CHECK(m.dice == doctest::Approx(1.0));
  CHECK(m.iou == doctest::Approx(1.0));
  CHECK(m.ber == doctest::Approx(0.0));  // absent class contributes zero error
}

TEST_CASE("metrics match the confusion-matrix oracle on 100 random 8x8 pairs") {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    auto pred = make_tensor<float>({1, 8, 8});
    auto gt = make_tensor<float>({1, 8, 8});
    for (int64_t i = 0; i < 64; ++i) {
      pred->data()[i] = static_cast<float>(rng.uniform(0, 1));
      gt->data()[i] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    }
    auto m = metrics(pred, gt);
    std::vector<double> pv(pred->vec().begin(), pred->vec().end());
    std::vector<double> gv(gt->vec().begin(), gt->vec().end());
    auto c = oracle::confusion(pv, gv);
    const double dice = (c.tp + c.fp + c.tp + c.fn) == 0
                            ? 1.0
                            : 2.0 * c.tp / double(2 * c.tp + c.fp + c.fn);
    const double iou = (c.tp + c.fp + c.fn) == 0 ? 1.0 : c.tp / double(c.tp + c.fp + c.fn);
    const double fg = (c.tp + c.fn) > 0 ? c.fn / double(c.tp + c.fn) : 0.0;
    const double bg = (c.tn + c.fp) > 0 ? c.fp / double(c.tn + c.fp) : 0.0;
    double mae = 0;
    for (int64_t i = 0; i < 64; ++i) mae += std::abs(pv[i] - gv[i]);
    mae /= 64;
    CHECK(m.dice == doctest::Approx(dice).epsilon(1e-12));
    CHECK(m.iou == doctest::Approx(iou).epsilon(1e-12));
    CHECK(m.ber == doctest::Approx(0.5 * (fg + bg)).epsilon(1e-12));
    CHECK(m.mae == doctest::Approx(mae).epsilon(1e-9));
  }
}

TEST_CASE("metrics reject out-of-range predictions") {
  auto bad = make_tensor<float>({1, 2, 2}, 1.5f);
  auto gt = make_tensor<float>({1, 2, 2});
  CHECK_THROWS_AS(metrics(bad, gt), ContractError);
}

TEST_CASE("untrained model scores below 0.5 dice; evaluation is deterministic") {
  auto model = make_model<float>(ModelConfig{}, 7);
  TaskConfig tc;
  tc.task = Concept::Bright;
  tc.n_train = 8;
  tc.n_test = 6;
  tc.seed = 9;
  auto ds = make_dataset(tc);

  // prompt from the first 4 training samples
  auto images = make_tensor<float>({4, 3, 48, 48});
  auto fg = make_tensor<float>({4, 1, 48, 48});
  for (int64_t i = 0; i < 4; ++i) {
    const auto& s = ds.train[i];
    std::copy(s.image->data(), s.image->data() + s.image->numel(),
              images->data() + i * s.image->numel());
    const auto& m = s.masks.at(Concept::Bright);
    std::copy(m->data(), m->data() + m->numel(), fg->data() + i * m->numel());
  }
  auto prompt = make_group_prompt<float>(images, fg, "BRIGHT");
  std::map<std::string, ConceptFilter<float>> filters;
  filters["BRIGHT"] = build_filter(prompt, model);

  auto r1 = evaluate(model, filters, {&ds}, 9, "deadbeef");
  auto r2 = evaluate(model, filters, {&ds}, 9, "deadbeef");
  REQUIRE(r1.rows.size() == r2.rows.size());
  for (size_t i = 0; i < r1.rows.size(); ++i) CHECK(r1.rows[i].value == r2.rows[i].value);
  CHECK(r1.get("BRIGHT", "dice") < 0.5);
  CHECK(r1.rows[0].n == 6);

  std::map<std::string, ConceptFilter<float>> missing;
  CHECK_THROWS_AS(evaluate(model, missing, {&ds}, 9, "x"), ConfigError);
}
