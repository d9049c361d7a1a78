#include <algorithm>

#include "doctest.h"
#include "spider/filter.hpp"
#include "spider/model.hpp"
#include "spider/ops.hpp"
#include "spider/rng.hpp"

using namespace spider;

namespace {

TensorPtr<double> random_images(int64_t b, int64_t hw, uint64_t seed) {
  Rng rng(seed);
  auto t = make_tensor<double>({b, 3, hw, hw});
  for (int64_t i = 0; i < t->numel(); ++i) t->data()[i] = rng.uniform(0, 1);
  return t;
}

}  // namespace

TEST_CASE("encode produces stride 2/4/8 pyramid with configured widths") {
  auto model = make_model<double>(ModelConfig{}, 3);
  auto x = random_images(2, 48, 1);
  auto pyr = encode(x, model.encoder, ForwardMode{false, false});
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0]->shape() == Shape{2, 16, 24, 24});
  CHECK(pyr[1]->shape() == Shape{2, 32, 12, 12});
  CHECK(pyr[2]->shape() == Shape{2, 64, 6, 6});
}

TEST_CASE("encode rejects resolutions not divisible by 8") {
  auto model = make_model<double>(ModelConfig{}, 3);
  auto x = make_tensor<double>({1, 3, 44, 48});
  CHECK_THROWS_AS(encode(x, model.encoder, ForwardMode{false, false}), DimensionError);
}

TEST_CASE("zero input with zero biases gives zero features and zero f") {
  auto model = make_model<double>(ModelConfig{}, 3);
  auto x = make_tensor<double>({1, 3, 48, 48});
  auto pyr = encode(x, model.encoder, ForwardMode{true, false});
  for (const auto& level : pyr)
    for (int64_t i = 0; i < level->numel(); ++i) CHECK(level->data()[i] == 0.0);
  auto f = decode(pyr, model.decoder);
  CHECK(f->shape() == Shape{1, 16, 24, 24});
  for (int64_t i = 0; i < f->numel(); ++i) CHECK(f->data()[i] == 0.0);
}

TEST_CASE("fixed seed and input give bit-identical features across model rebuilds") {
  auto x = random_images(1, 48, 9);
  auto run = [&] {
    auto model = make_model<double>(ModelConfig{}, 42);
    auto pyr = encode(x, model.encoder, ForwardMode{false, false});
    return pyr.back()->vec();
  };
  auto a = run();
  auto b = run();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("encode in eval mode is pure: no state mutation, same output") {
  auto model = make_model<double>(ModelConfig{}, 5);
  auto x = random_images(1, 48, 2);
  std::vector<double> stats_before;
  for (const auto& [name, t] : model.buffers())
    stats_before.insert(stats_before.end(), t->vec().begin(), t->vec().end());
  auto y1 = encode(x, model.encoder, ForwardMode{false, false}).back()->vec();
  auto y2 = encode(x, model.encoder, ForwardMode{false, false}).back()->vec();
  std::vector<double> stats_after;
  for (const auto& [name, t] : model.buffers())
    stats_after.insert(stats_after.end(), t->vec().begin(), t->vec().end());
  CHECK(y1 == y2);
  CHECK(stats_before == stats_after);
}

TEST_CASE("decode gradient reaches every deepest-level position") {
  auto model = make_model<double>(ModelConfig{}, 7);
  std::vector<TensorPtr<double>> pyr;
  Rng rng(3);
  const std::vector<Shape> shapes{{1, 16, 24, 24}, {1, 32, 12, 12}, {1, 64, 6, 6}};
  for (const auto& s : shapes) {
    auto t = make_tensor<double>(s);
    for (int64_t i = 0; i < t->numel(); ++i) t->data()[i] = rng.uniform(-1, 1);
    t->set_requires_grad(true);
    pyr.push_back(t);
  }
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  auto f = decode(pyr, model.decoder);
  tape.backward(ops::sum_all(f));
  const auto& deepest = pyr.back();
  // every spatial position of the deepest level contributes through upsampling
  for (int64_t y = 0; y < 6; ++y)
    for (int64_t x = 0; x < 6; ++x) {
      double mag = 0;
      for (int64_t c = 0; c < 64; ++c) mag += std::abs(deepest->grad()[(c * 6 + y) * 6 + x]);
      CHECK(mag > 0.0);
    }
}

TEST_CASE("prompt_encode shape and gradient isolation") {
  auto model = make_model<double>(ModelConfig{}, 11);
  auto images = random_images(6, 48, 4);
  auto f_g = prompt_encode(images, model);
  CHECK(f_g->shape() == Shape{6, 64, 6, 6});
  CHECK_FALSE(f_g->requires_grad());

  // a loss through F_g and the prompt stream leaves encoder grads untouched
  model.zero_grads();
  Tape<double> tape;
  TapeScope<double> scope(&tape);
  auto f_mem = project_memory(f_g, model.prompt_stream);
  tape.backward(ops::sum_all(f_mem));
  for (const auto& [name, t] : model.params()) {
    if (name.rfind("enc.", 0) == 0) {
      for (int64_t i = 0; i < t->numel(); ++i) CHECK(t->grad()[i] == 0.0);
    }
  }
  // while w_proj did receive gradient
  double wproj_mag = 0;
  for (int64_t i = 0; i < model.prompt_stream.w_proj->numel(); ++i)
    wproj_mag += std::abs(model.prompt_stream.w_proj->grad()[i]);
  CHECK(wproj_mag > 0.0);
}

TEST_CASE("shared prompt encoder equals eval-mode encode deepest output") {
  auto model = make_model<double>(ModelConfig{}, 13);
  auto images = random_images(3, 48, 6);
  auto via_prompt = prompt_encode(images, model);
  auto via_encode = encode(images, model.encoder, ForwardMode{false, false}).back();
  REQUIRE(via_prompt->shape() == via_encode->shape());
  for (int64_t i = 0; i < via_prompt->numel(); ++i)
    CHECK(via_prompt->data()[i] == via_encode->data()[i]);
}

TEST_CASE("separate prompt encoder differs from the segmentation encoder") {
  ModelConfig cfg;
  cfg.shared_prompt_encoder = false;
  auto model = make_model<double>(cfg, 13);
  REQUIRE(model.prompt_encoder.has_value());
  auto images = random_images(2, 48, 8);
  auto via_prompt = prompt_encode(images, model);
  auto via_encode = encode(images, model.encoder, ForwardMode{false, false}).back();
  double diff = 0;
  for (int64_t i = 0; i < via_prompt->numel(); ++i)
    diff += std::abs(via_prompt->data()[i] - via_encode->data()[i]);
  CHECK(diff > 1e-3);
}

TEST_CASE("gap_embed: channel means of the deepest features, determinism") {
  auto model = make_model<double>(ModelConfig{}, 17);
  auto img = random_images(1, 48, 10);
  auto emb = gap_embed(img, model);
  CHECK(emb->shape() == Shape{1, 64});
  auto feat = prompt_encode(img, model);
  for (int64_t c = 0; c < 64; ++c) {
    double mean = 0;
    for (int64_t p = 0; p < 36; ++p) mean += feat->data()[c * 36 + p];
    mean /= 36;
    CHECK(emb->data()[c] == doctest::Approx(mean).epsilon(1e-12));
  }

  auto two = make_tensor<double>({2, 3, 48, 48});
  std::copy(img->data(), img->data() + img->numel(), two->data());
  std::copy(img->data(), img->data() + img->numel(), two->data() + img->numel());
  auto emb2 = gap_embed(two, model);
  for (int64_t c = 0; c < 64; ++c) {
    CHECK(emb2->data()[c] == emb->data()[c]);
    CHECK(emb2->data()[64 + c] == emb->data()[c]);
  }
}

TEST_CASE("registry holds every learnable exactly once and counts are reportable") {
  auto model = make_model<double>(ModelConfig{}, 19);
  std::vector<std::string> names;
  for (const auto& [name, t] : model.params()) names.push_back(name);
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
  CHECK(model.param_count() > 0);
  CHECK(model.trainable_count() == model.param_count());
}
