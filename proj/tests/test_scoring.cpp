#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "cfprune/allocation.hpp"
#include "cfprune/error.hpp"
#include "cfprune/scoring.hpp"
#include "test_util.hpp"

using namespace cfprune;
using namespace cfprune::testing;

namespace {

ModelGraph one_layer(Tensor w) {
  LayerSpec l;
  l.name = "L";
  l.weight = std::move(w);
  return ModelGraph({{"b", {l}}}, LossKind::kMse);
}

}  // namespace

TEST(Magnitude, Examples) {
  EXPECT_EQ(magnitude_scores(one_layer(Tensor({1, 1}, {0.0})))[0].scores[0], 0.0);
  const auto s = magnitude_scores(one_layer(Tensor({1, 2}, {-3, 2})));
  EXPECT_EQ(s[0].scores[0], 3.0);
  EXPECT_EQ(s[0].scores[1], 2.0);
}

TEST(Magnitude, TopKMatchesSortOracle) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> n;
  std::vector<double> w(60);
  for (auto& v : w) v = n(gen);
  const auto s = magnitude_scores(one_layer(Tensor({6, 10}, w)));
  std::vector<std::size_t> idx(60);
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::abs(w[a]) > std::abs(w[b]); });
  std::vector<std::size_t> by_score(60);
  std::iota(by_score.begin(), by_score.end(), 0u);
  std::sort(by_score.begin(), by_score.end(), [&](auto a, auto b) { return s[0].scores[a] > s[0].scores[b]; });
  EXPECT_TRUE(std::equal(idx.begin(), idx.begin() + 15, by_score.begin()));
}

TEST(FirstOrder, AnalyticScalarCase) {
  // w = 2, x = 1, y = 0: grad = 2 (2 - 0) 1 = 4, score = 8.
  const auto model = one_layer(Tensor({1, 1}, {2.0}));
  const CalibrationSet batch{{{Tensor({1, 1}, {1.0}), Tensor({1, 1}, {0.0})}}};
  EXPECT_DOUBLE_EQ(first_order_saliency(model, batch)[0].scores[0], 8.0);
}

TEST(FirstOrder, ZeroGradientsGiveZeroScores) {
  const auto model = one_layer(Tensor({2, 2}));
  const CalibrationSet batch{{{Tensor({1, 2}, {1.0, 2.0}), Tensor({1, 2}, {0.0, 0.0})}}};
  const auto s = first_order_saliency(model, batch);
  for (double v : s[0].scores.values()) EXPECT_EQ(v, 0.0);
}

TEST(FirstOrder, MatchesFiniteDifferenceOracle) {
  std::mt19937_64 gen(12);
  const auto model = random_mlp({3, 5, 2}, gen, Activation::kGelu);
  const auto batch = random_regression_batch(4, 2, 3, 2, gen);
  const auto s = first_order_saliency(model, batch);
  for (std::size_t li = 0; li < model.layer_count(); ++li) {
    for (std::size_t i = 0; i < model.layer(li).numel(); ++i) {
      const double oracle = std::abs(model.layer(li).weight[i]) * std::abs(fd_weight_gradient(model, li, i, batch));
      EXPECT_LE(std::abs(s[li].scores[i] - oracle), 1e-3 * std::max(oracle, 1e-6));
    }
  }
}

TEST(Aggregate, SumAndMean) {
  const ElementScores one{{"a", Tensor({1, 1}, {2.5})}};
  EXPECT_EQ(aggregate_to_layers(one, Aggregation::kSum, ScoreMethod::kMagnitude).entries[0].score, 2.5);
  EXPECT_EQ(aggregate_to_layers(one, Aggregation::kMean, ScoreMethod::kMagnitude).entries[0].score, 2.5);
  const ElementScores three{{"a", Tensor({1, 3}, {1, 2, 3})}};
  EXPECT_EQ(aggregate_to_layers(three, Aggregation::kSum, ScoreMethod::kMagnitude).entries[0].score, 6.0);
  EXPECT_EQ(aggregate_to_layers(three, Aggregation::kMean, ScoreMethod::kMagnitude).entries[0].score, 2.0);
  EXPECT_THROW(aggregate_to_layers(three, Aggregation::kScalar, ScoreMethod::kMagnitude), InputError);
  const ElementScores negative{{"a", Tensor({1, 2}, {1, -2})}};
  EXPECT_THROW(aggregate_to_layers(negative, Aggregation::kSum, ScoreMethod::kMagnitude), InputError);
}

TEST(Aggregate, UniformElementScoresGiveUniformSparsity) {
  std::mt19937_64 gen(2);
  const auto model = random_mlp({10, 20, 5}, gen);  // sizes 200 and 100
  ElementScores es;
  for (const auto& l : model.layers()) {
    Tensor t({l.d_out(), l.d_in()});
    for (double& v : t.data()) v = 0.7;
    es.push_back({l.name, t});
  }
  const auto map = aggregate_to_layers(es, Aggregation::kSum, ScoreMethod::kMagnitude);
  EXPECT_NEAR(map.entries[0].score / map.entries[1].score, 2.0, 1e-12);
  const auto plan = allocate_sparsity(map, model, 0.5, 1.0, Granularity::kLayer);
  EXPECT_EQ(plan.layers[0].keep, 100u);
  EXPECT_EQ(plan.layers[1].keep, 50u);
}

TEST(Aggregate, Blocks) {
  std::mt19937_64 gen(2);
  const ModelGraph model({{"b0", {dense_layer("x", 3, 2, gen), dense_layer("y", 2, 3, gen)}},
                          {"b1", {dense_layer("z", 1, 2, gen)}}},
                         LossKind::kMse);
  ScoreMap s;
  s.entries = {{"x", 2.0}, {"y", 3.0}, {"z", 4.0}};
  const auto b = aggregate_to_blocks(s, model);
  ASSERT_EQ(b.scores.entries.size(), 2u);
  EXPECT_EQ(b.scores.entries[0].name, "b0");
  EXPECT_EQ(b.scores.entries[0].score, 5.0);
  EXPECT_EQ(b.sizes[0], 12u);
  EXPECT_EQ(b.scores.entries[1].score, 4.0);

  const ModelGraph single({{"only", {dense_layer("q", 2, 2, gen)}}}, LossKind::kMse);
  ScoreMap one;
  one.entries = {{"q", 1.5}};
  EXPECT_EQ(aggregate_to_blocks(one, single).scores.entries[0].score, 1.5);

  ScoreMap stray;
  stray.entries = {{"nope", 1.0}};
  EXPECT_THROW(aggregate_to_blocks(stray, model), InputError);
}
