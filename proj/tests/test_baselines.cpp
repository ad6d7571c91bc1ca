#include <gtest/gtest.h>

#include <random>

#include "cfprune/baselines.hpp"
#include "cfprune/error.hpp"
#include "cfprune/eval.hpp"
#include "test_util.hpp"

using namespace cfprune;
using namespace cfprune::testing;

namespace {

LayerSpec fixed_layer(std::string name, std::size_t rows, std::size_t cols, double value) {
  LayerSpec l;
  l.name = std::move(name);
  l.weight = Tensor({rows, cols}, std::vector<double>(rows * cols, value));
  return l;
}

}  // namespace

TEST(GlobalMagnitude, KeepsLargestAcrossLayers) {
  const ModelGraph model({{"a", {fixed_layer("x", 2, 2, 1.0)}}, {"b", {fixed_layer("y", 2, 2, 2.0)}}},
                         LossKind::kMse);
  const auto r = global_magnitude_prune(model, 0.5);
  EXPECT_EQ(r.masks.layers[0].kept(), 0u);
  EXPECT_EQ(r.masks.layers[1].kept(), 4u);
  EXPECT_EQ(r.history.size(), 1u);
  for (double v : r.model.layer("x").weight.values()) EXPECT_EQ(v, 0.0);
}

TEST(GlobalMagnitude, TiesGoToEarlierLayer) {
  const ModelGraph model({{"a", {fixed_layer("x", 2, 2, 1.0)}}, {"b", {fixed_layer("y", 2, 2, 1.0)}}},
                         LossKind::kMse);
  const auto r = global_magnitude_prune(model, 0.25);
  EXPECT_EQ(r.masks.layers[0].kept(), 4u);
  EXPECT_EQ(r.masks.layers[1].kept(), 2u);
  EXPECT_EQ(r.masks.layers[1].keep, (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(GlobalMagnitude, CollapsesSmallScaleLayerAtHighSparsity) {
  std::mt19937_64 gen(1);
  auto blocks = random_mlp({10, 10, 10, 10}, gen).blocks();
  for (double& v : blocks[1].layers[0].weight.data()) v *= 1e-3;
  const ModelGraph model(blocks, LossKind::kMse);
  const auto r = global_magnitude_prune(model, 0.6);
  EXPECT_EQ(r.masks.find("L1")->kept(), 0u);
  EXPECT_EQ(r.masks.kept(), keep_budget(0.6, 300));
  EXPECT_THROW(global_magnitude_prune(model, 1.0), InputError);
}

TEST(IterSchedule, LinearAndValidation) {
  const auto s = IterSchedule::linear(0.6, 3);
  ASSERT_EQ(s.targets.size(), 3u);
  EXPECT_DOUBLE_EQ(s.targets[0], 0.2);
  EXPECT_DOUBLE_EQ(s.targets[1], 0.4);
  EXPECT_EQ(s.targets[2], 0.6);
  EXPECT_NO_THROW(s.validate(0.6));
  EXPECT_THROW((IterSchedule{{0.4, 0.2, 0.6}}.validate(0.6)), InputError);
  EXPECT_THROW((IterSchedule{{0.2, 0.5}}.validate(0.6)), InputError);
  EXPECT_THROW(IterSchedule::linear(0.6, 0), InputError);
}

TEST(IterativeGradient, MasksShrinkMonotonically) {
  std::mt19937_64 gen(2);
  const auto model = random_mlp({6, 8, 8, 3}, gen, Activation::kGelu);
  const auto batch = random_regression_batch(8, 2, 6, 3, gen);
  const auto schedule = IterSchedule::linear(0.6, 3);
  const auto r = iterative_gradient_prune(model, batch, 0.6, schedule);
  ASSERT_EQ(r.history.size(), 3u);
  const std::size_t total = model.prunable_parameter_count();
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(r.history[t].kept(), keep_budget(schedule.targets[t], total));
    if (t == 0) continue;
    for (std::size_t l = 0; l < r.history[t].layers.size(); ++l) {
      for (std::size_t i = 0; i < r.history[t].layers[l].numel(); ++i) {
        if (r.history[t].layers[l].keep[i]) EXPECT_TRUE(r.history[t - 1].layers[l].keep[i]);
      }
    }
  }
  EXPECT_EQ(r.masks, r.history.back());
}

TEST(IterativeGradient, OneIterationIsOneShotSaliency) {
  std::mt19937_64 gen(3);
  const auto model = random_mlp({5, 7, 2}, gen, Activation::kRelu);
  const auto batch = random_regression_batch(6, 1, 5, 2, gen);
  const auto r = iterative_gradient_prune(model, batch, 0.5, IterSchedule::linear(0.5, 1));
  const auto oneshot = global_select(first_order_saliency(model, batch), nullptr,
                                     keep_budget(0.5, model.prunable_parameter_count()));
  EXPECT_EQ(r.masks, oneshot);
}

TEST(UniformLayerwise, HalfOfEveryLayer) {
  std::mt19937_64 gen(4);
  const auto model = random_mlp({8, 10, 6, 4}, gen);
  const auto batch = random_regression_batch(6, 2, 8, 4, gen);
  const auto r = uniform_layerwise_prune(model, batch, 0.5, FineMethod::kWanda);
  for (const auto& m : r.masks.layers) EXPECT_EQ(m.kept() * 2, m.numel());
}

TEST(UniformLayerwise, EqualsAllocationWithConstantDensity) {
  // Equal-size layers with equal scores and no cap: the coarse step reproduces uniform.
  std::mt19937_64 gen(5);
  const auto model = random_mlp({6, 6, 6, 6}, gen);
  const auto batch = random_regression_batch(6, 2, 6, 6, gen);
  ScoreMap s;
  for (const auto& l : model.layers()) s.entries.push_back({l.name, 1.0});
  const auto plan = allocate_sparsity(s, model, 0.5, 1.0, Granularity::kLayer);
  const auto a = sequential_prune(model, plan, batch, FineMethod::kWanda);
  const auto b = uniform_layerwise_prune(model, batch, 0.5, FineMethod::kWanda);
  EXPECT_EQ(a.masks, b.masks);
}

TEST(LocalScores, WandaSumAndMagnitudeSum) {
  LayerSpec l;
  l.name = "x";
  l.weight = Tensor({1, 2}, {2.0, -1.0});
  const ModelGraph model({{"a", {l}}}, LossKind::kMse);
  const CalibrationSet batch{{{Tensor({1, 2}, {3.0, 4.0}), Tensor({1, 1}, {0.0})}}};
  EXPECT_DOUBLE_EQ(local_scores(model, batch, FineMethod::kWanda).entries[0].score, 2.0 * 3.0 + 1.0 * 4.0);
  EXPECT_DOUBLE_EQ(local_scores(model, batch, FineMethod::kMagnitude).entries[0].score, 3.0);
}

TEST(LocalScoreRatios, ConstantScoresGiveUniformRatios) {
  std::mt19937_64 gen(6);
  const auto model = random_mlp({6, 6, 6}, gen);
  // Every layer weight equal and inputs with equal column norms: equal local scores.
  auto blocks = model.blocks();
  for (auto& b : blocks)
    for (double& v : b.layers[0].weight.data()) v = 0.5;
  for (auto& b : blocks) b.layers[0].bias.reset();
  const ModelGraph flat(blocks, LossKind::kMse);
  const CalibrationSet batch{{{Tensor({1, 6}, std::vector<double>(6, 1.0)), Tensor({1, 6})}}};
  const auto plan = local_score_ratios(flat, batch, 0.5, 1.0, FineMethod::kMagnitude);
  EXPECT_EQ(plan.layers[0].keep, 18u);
  EXPECT_EQ(plan.layers[1].keep, 18u);
}

TEST(LocalScoreRatios, InputRescaleSkewsRatios) {
  std::mt19937_64 gen(7);
  auto model = random_mlp({6, 8, 8, 3}, gen, Activation::kRelu);
  const auto batch = random_regression_batch(8, 2, 6, 3, gen);
  const auto before = local_score_ratios(model, batch, 0.5, 0.9, FineMethod::kWanda);
  const double loss = forward_loss(model, batch);
  rescale_layer_output(model, "L0", 100.0);
  EXPECT_NEAR(forward_loss(model, batch), loss, 1e-9 * std::max(1.0, loss));
  const auto after = local_score_ratios(model, batch, 0.5, 0.9, FineMethod::kWanda);
  // Only L0's own score grows (x100); L1 sees 100x inputs through 1/100 weights.
  EXPECT_LT(before.layers[0].keep, 48u);
  EXPECT_EQ(after.layers[0].keep, 48u);
  EXPECT_GT(after.layers[2].sparsity, before.layers[2].sparsity - 1e-12);
}
