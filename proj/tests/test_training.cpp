#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "spider/gradcheck.hpp"
#include "spider/train.hpp"

using namespace spider;

namespace {

TensorPtr<double> rand_t(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  auto t = make_tensor<double>(std::move(shape));
  for (int64_t i = 0; i < t->numel(); ++i) t->data()[i] = rng.uniform(lo, hi);
  return t;
}

// tiny synthetic task pair on a 24x24 canvas, reused across training tests
std::vector<TaskTensors<double>> micro_data(int64_t n, uint64_t seed) {
  GeneratorParams gp;
  gp.canvas = 24;
  gp.radius_lo = 6.0;
  gp.radius_hi = 8.0;
  gp.max_area_frac = 0.4;
  std::vector<TaskTensors<double>> out;
  for (Concept c : {Concept::Bright, Concept::Dark}) {
    TaskConfig tc;
    tc.task = c;
    tc.gen = gp;
    tc.n_train = n;
    tc.n_test = 2;
    tc.seed = seed;
    out.push_back(to_task_tensors<double>(make_dataset(tc)));
  }
  return out;
}

// 16x16 batch with random images and random (valid) binary masks; the
// micro-configuration gradient check does not need learnable structure
std::vector<TaskTensors<double>> random_data_16(int64_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<TaskTensors<double>> out;
  for (const char* name : {"BRIGHT", "DARK"}) {
    TaskTensors<double> tt;
    tt.task_id = name;
    tt.images = rand_t({n, 3, 16, 16}, rng, 0, 1);
    tt.masks = make_tensor<double>({n, 1, 16, 16});
    for (int64_t i = 0; i < tt.masks->numel(); ++i)
      tt.masks->data()[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
    out.push_back(tt);
  }
  return out;
}

}  // namespace

TEST_CASE("ppa_loss: perfect prediction vanishes") {
  auto gt = make_tensor<double>({1, 1, 8, 8}, 1.0);
  auto logits = make_tensor<double>({1, 1, 8, 8}, 30.0);
  auto loss = ppa_loss(logits, gt, 7);
  CHECK(loss->value() < 1e-6);
}

TEST_CASE("ppa_loss: zero logits give ln 2 weighted BCE for binary gt") {
  // with x = 0 the elementwise BCE is ln 2 regardless of the weight map, so
  // loss - weighted IoU term == ln 2 exactly
  Rng rng(3);
  auto gt = make_tensor<double>({1, 1, 10, 10});
  for (int64_t y = 3; y < 7; ++y)
    for (int64_t x = 3; x < 7; ++x) gt->data()[y * 10 + x] = 1.0;
  auto logits = make_tensor<double>({1, 1, 10, 10}, 0.0);
  auto loss = ppa_loss(logits, gt, 7);
  const double ref = oracle::ppa(logits->vec(), gt->vec(), 10, 10, 7);
  CHECK(std::abs(loss->value() - ref) < 1e-10);
  const double iou_part = ref - std::log(2.0);
  CHECK(std::abs((loss->value() - iou_part) - std::log(2.0)) < 1e-6);
}

TEST_CASE("ppa_loss matches the elementwise oracle on random cases") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto logits = rand_t({2, 1, 4, 4}, rng, -4, 4);
    auto gt = make_tensor<double>({2, 1, 4, 4});
    for (int64_t i = 0; i < gt->numel(); ++i) gt->data()[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    auto loss = ppa_loss(logits, gt, 7);
    double ref = 0;
    for (int64_t b = 0; b < 2; ++b) {
      std::vector<double> lb(logits->data() + b * 16, logits->data() + (b + 1) * 16);
      std::vector<double> gb(gt->data() + b * 16, gt->data() + (b + 1) * 16);
      ref += oracle::ppa(lb, gb, 4, 4, 7);
    }
    ref /= 2;
    CHECK(std::abs(loss->value() - ref) < 1e-8);
  }
}

TEST_CASE("ppa_loss rejects out-of-range ground truth") {
  auto gt = make_tensor<double>({1, 1, 4, 4}, 1.5);
  auto logits = make_tensor<double>({1, 1, 4, 4});
  CHECK_THROWS_AS(ppa_loss(logits, gt, 7), ContractError);
}

TEST_CASE("ppa_loss gradcheck") {
  Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    auto logits = rand_t({1, 1, 6, 6}, rng, -2, 2);
    logits->set_requires_grad(true);
    auto gt = make_tensor<double>({1, 1, 6, 6});
    for (int64_t i = 0; i < gt->numel(); ++i) gt->data()[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
    CHECK(finite_diff_check<double>([&] { return ppa_loss(logits, gt, 5); }, {logits}) < 1e-4);
  }
}

TEST_CASE("train config validation: N=B rejected, divisibility enforced") {
  TrainConfig cfg;
  cfg.tasks = {"BRIGHT"};
  cfg.samples_per_task = 4;
  cfg.batch_per_task = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.batch_per_task = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.batch_per_task = 2;
  CHECK_NOTHROW(cfg.validate());

  // paper-scale arithmetic: N=16, B=4 gives 4 inner loops and 12 prompts
  TrainConfig paper;
  paper.tasks = {"BRIGHT"};
  paper.samples_per_task = 16;
  paper.batch_per_task = 4;
  paper.validate();
  CHECK(paper.samples_per_task / paper.batch_per_task == 4);
  CHECK(paper.samples_per_task - paper.batch_per_task == 12);
  // desk defaults: N=8, B=2 gives 4 inner loops and 6 prompts
  TrainConfig desk;
  desk.tasks = {"BRIGHT"};
  desk.validate();
  CHECK(desk.samples_per_task / desk.batch_per_task == 4);
  CHECK(desk.samples_per_task - desk.batch_per_task == 6);
}

TEST_CASE("build_iteration_batch: distinct samples, deterministic, size checks") {
  auto data = micro_data(8, 11);
  TrainConfig cfg;
  cfg.tasks = {"BRIGHT", "DARK"};
  cfg.samples_per_task = 8;
  cfg.batch_per_task = 2;
  cfg.flip_augment = false;

  Rng rng1 = Rng(5).derive(1);
  Rng rng2 = Rng(5).derive(1);
  auto b1 = build_iteration_batch(data, cfg, rng1);
  auto b2 = build_iteration_batch(data, cfg, rng2);
  CHECK(b1.images->shape() == Shape{16, 3, 24, 24});
  CHECK(b1.images->vec() == b2.images->vec());
  CHECK(b1.masks->vec() == b2.masks->vec());

  // without replacement: all rows distinct within a task
  const int64_t row = 3 * 24 * 24;
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t i = 0; i < 8; ++i)
      for (int64_t j = i + 1; j < 8; ++j) {
        bool same = true;
        for (int64_t p = 0; p < row && same; ++p)
          same = b1.images->data()[(t * 8 + i) * row + p] ==
                 b1.images->data()[(t * 8 + j) * row + p];
        CHECK_FALSE(same);
      }

  TrainConfig too_big = cfg;
  too_big.samples_per_task = 100;
  too_big.batch_per_task = 50;
  Rng rng3(1);
  CHECK_THROWS_AS(build_iteration_batch(data, too_big, rng3), DataError);
}

TEST_CASE("multitask loss decomposes into per-task losses in eval mode") {
  auto data = micro_data(4, 13);
  ModelConfig mc;
  mc.widths = {4, 6, 8};
  mc.channels = 4;
  mc.blocks = 1;
  mc.heads = 1;
  auto model = make_model<double>(mc, 55);
  TrainConfig cfg;
  cfg.tasks = {"BRIGHT", "DARK"};
  cfg.samples_per_task = 4;
  cfg.batch_per_task = 1;
  cfg.flip_augment = false;
  Rng rng(17);
  auto batch = build_iteration_batch(data, cfg, rng);

  ForwardMode eval{false, false};
  auto joint = multitask_loss(model, batch, cfg, 0, eval);
  double sum = 0;
  for (int64_t t = 0; t < 2; ++t) {
    TrainConfig one = cfg;
    one.tasks = {cfg.tasks[t]};
    IterationBatch<double> sub;
    sub.n_per_task = 4;
    sub.images = ops::slice_rows(batch.images, t * 4, (t + 1) * 4);
    sub.masks = ops::slice_rows(batch.masks, t * 4, (t + 1) * 4);
    sum += multitask_loss(model, sub, one, 0, eval).total->value();
  }
  CHECK(std::abs(joint.total->value() - sum) < 1e-10);
  CHECK(joint.per_task.size() == 2);
}

TEST_CASE("adam: zero grad fixes parameters, first step matches closed form") {
  Rng rng(19);
  auto p = rand_t({4}, rng);
  p->set_requires_grad(true);
  const std::vector<double> before = p->vec();
  std::vector<std::pair<std::string, TensorPtr<double>>> params{{"p", p}};
  AdamState<double> state;
  adam_step(params, state, 0.1);
  CHECK(p->vec() == before);  // zero gradient

  // first step with gradient g: |delta| = lr * g / (|g| + eps) after bias correction
  std::vector<double> g{0.5, -2.0, 0.001, 7.0};
  for (int64_t i = 0; i < 4; ++i) p->grad()[i] = g[i];
  AdamState<double> fresh;
  const std::vector<double> before2 = p->vec();
  adam_step(params, fresh, 0.1);
  for (int64_t i = 0; i < 4; ++i) {
    const double expect = before2[i] - 0.1 * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(p->data()[i] == doctest::Approx(expect).epsilon(1e-9));
    CHECK(p->grad()[i] == 0.0);  // grads zeroed afterwards
  }

  auto frozen = make_tensor<double>({2});
  std::vector<std::pair<std::string, TensorPtr<double>>> bad{{"frozen", frozen}};
  AdamState<double> s2;
  CHECK_THROWS_AS(adam_step(bad, s2, 0.1), ContractError);
}

TEST_CASE("lr schedule: step decay by rate every size epochs") {
  TrainConfig cfg;
  cfg.tasks = {"BRIGHT"};
  cfg.lr = 1e-4;
  cfg.decay_size = 30;
  cfg.decay_rate = 0.9;
  CHECK(cfg.lr_at_epoch(0) == doctest::Approx(1e-4));
  CHECK(cfg.lr_at_epoch(29) == doctest::Approx(1e-4));
  CHECK(cfg.lr_at_epoch(30) == doctest::Approx(0.9e-4));
  CHECK(cfg.lr_at_epoch(60) == doctest::Approx(0.81e-4));
}

TEST_CASE("epochs=0 leaves initialized parameters unchanged") {
  auto data = micro_data(4, 23);
  ModelConfig mc;
  mc.widths = {4, 6, 8};
  mc.channels = 4;
  mc.blocks = 1;
  mc.heads = 1;
  auto model = make_model<double>(mc, 77);
  std::vector<double> before;
  for (const auto& [n, t] : model.params())
    before.insert(before.end(), t->vec().begin(), t->vec().end());
  TrainConfig cfg;
  cfg.tasks = {"BRIGHT", "DARK"};
  cfg.samples_per_task = 4;
  cfg.batch_per_task = 1;
  cfg.epochs = 0;
  auto curve = run_training(model, data, cfg);
  CHECK(curve.empty());
  std::vector<double> after;
  for (const auto& [n, t] : model.params())
    after.insert(after.end(), t->vec().begin(), t->vec().end());
  CHECK(before == after);
}

TEST_CASE("fixed seed reproduces loss curves bitwise; strategies all run") {
  auto data = micro_data(4, 29);
  for (Strategy strat : {Strategy::BalanceUnify, Strategy::RandomUnify,
                         Strategy::BalanceSeparate}) {
    CAPTURE(strategy_name(strat));
    auto run = [&] {
      ModelConfig mc;
      mc.widths = {4, 6, 8};
      mc.channels = 4;
      mc.blocks = 1;
      mc.heads = 1;
      auto model = make_model<double>(mc, 99);
      TrainConfig cfg;
      cfg.tasks = {"BRIGHT", "DARK"};
      cfg.samples_per_task = 4;
      cfg.batch_per_task = 1;
      cfg.epochs = 2;
      cfg.strategy = strat;
      cfg.seed = 4242;
      return run_training(model, data, cfg);
    };
    auto c1 = run();
    auto c2 = run();
    REQUIRE(c1.size() == c2.size());
    REQUIRE(!c1.empty());
    for (size_t i = 0; i < c1.size(); ++i) {
      CHECK(c1[i].total == c2[i].total);
      CHECK(std::isfinite(c1[i].total));
      CHECK(c1[i].per_task == c2[i].per_task);
    }
  }
}

TEST_CASE("one balance_unify step updates each trainable parameter at most once") {
  // with a zero learning rate multiplier trick: verify adam runs exactly once
  // per inner iteration by counting step increments
  auto data = micro_data(4, 31);
  ModelConfig mc;
  mc.widths = {4, 6, 8};
  mc.channels = 4;
  mc.blocks = 1;
  mc.heads = 1;
  auto model = make_model<double>(mc, 101);
  TrainConfig cfg;
  cfg.tasks = {"BRIGHT", "DARK"};
  cfg.samples_per_task = 4;
  cfg.batch_per_task = 1;
  Rng rng(7);
  auto batch = build_iteration_batch(data, cfg, rng);
  AdamState<double> adam;
  train_step(model, batch, cfg, 0, adam, 1e-4, rng, true);
  CHECK(adam.step == 1);
}

TEST_CASE("batch statistics are computed over the concatenated multi-task batch") {
  // craft a two-task batch whose tasks have very different intensity levels:
  // joint statistics differ from per-task ones, so the joint-normalized
  // features of task 0 must differ from its separately-normalized features
  ModelConfig mc;
  mc.widths = {4, 6, 8};
  mc.channels = 4;
  mc.blocks = 1;
  mc.heads = 1;
  auto model = make_model<double>(mc, 103);
  auto bright = make_tensor<double>({2, 3, 16, 16}, 0.9);
  auto dark = make_tensor<double>({2, 3, 16, 16}, 0.1);
  Rng rng(33);
  for (int64_t i = 0; i < bright->numel(); ++i) {
    bright->data()[i] += rng.uniform(-0.05, 0.05);
    dark->data()[i] += rng.uniform(-0.05, 0.05);
  }
  std::vector<TensorPtr<double>> parts{bright, dark};
  auto joint = ops::concat_rows(parts);
  auto joint_feat = encode(joint, model.encoder, ForwardMode{true, false}).back();
  auto solo_feat = encode(bright, model.encoder, ForwardMode{true, false}).back();
  double diff = 0;
  for (int64_t i = 0; i < solo_feat->numel(); ++i)
    diff += std::abs(joint_feat->data()[i] - solo_feat->data()[i]);
  CHECK(diff > 1e-3);
}

TEST_CASE("micro-configuration full-loss gradient check") {
  // 2 tasks, N=4, B=1, 16x16 images, C=4, L=1, 1 head, double precision,
  // independent frozen prompt encoder so every trainable parameter's analytic
  // gradient is complete
  auto data = random_data_16(4, 37);
  ModelConfig mc;
  mc.widths = {4, 6, 8};
  mc.channels = 4;
  mc.blocks = 1;
  mc.heads = 1;
  mc.shared_prompt_encoder = false;
  auto model = make_model<double>(mc, 107);
  TrainConfig cfg;
  cfg.tasks = {"BRIGHT", "DARK"};
  cfg.samples_per_task = 4;
  cfg.batch_per_task = 1;
  cfg.flip_augment = false;
  Rng rng(41);
  auto batch = build_iteration_batch(data, cfg, rng);

  std::vector<TensorPtr<double>> params;
  for (const auto& [name, t] : model.trainable_params()) params.push_back(t);
  const double err = finite_diff_check<double>(
      [&] {
        return multitask_loss(model, batch, cfg, 0, ForwardMode{true, false}).total;
      },
      params, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("short training run decreases the loss") {
  auto data = micro_data(8, 43);
  ModelConfig mc;
  mc.widths = {4, 6, 8};
  mc.channels = 4;
  mc.blocks = 1;
  mc.heads = 1;
  auto model = make_model<double>(mc, 109);
  TrainConfig cfg;
  cfg.tasks = {"BRIGHT", "DARK"};
  cfg.samples_per_task = 4;
  cfg.batch_per_task = 1;
  cfg.epochs = 8;
  cfg.lr = 1e-3;
  cfg.seed = 7;
  auto curve = run_training(model, data, cfg);
  REQUIRE(curve.size() >= 16);
  double head = 0, tail = 0;
  for (int i = 0; i < 8; ++i) {
    head += curve[i].total;
    tail += curve[curve.size() - 1 - i].total;
  }
  CHECK(tail < head);
}
