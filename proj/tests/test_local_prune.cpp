#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "cfprune/error.hpp"
#include "cfprune/local_prune.hpp"
#include "test_util.hpp"

using namespace cfprune;
using namespace cfprune::testing;

namespace {

LayerSpec row_layer(std::vector<double> w, std::size_t rows = 1) {
  LayerSpec l;
  l.name = "L";
  const std::size_t cols = w.size() / rows;
  l.weight = Tensor({rows, cols}, std::move(w));
  return l;
}

// Activations whose column j has norm exactly norms[j].
Matrix diag_activations(const std::vector<double>& norms) {
  const auto d = static_cast<Eigen::Index>(norms.size());
  Matrix x = Matrix::Zero(d, d);
  for (Eigen::Index j = 0; j < d; ++j) x(j, j) = norms[static_cast<std::size_t>(j)];
  return x;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& gen) {
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(gen);
  return m;
}

// Best compensated row with column q removed, for the damped quadratic
// (w - v)^T H (w - v): v_S = w_S + H_SS^-1 H_Sq w_q.
Vector least_squares_removal(const Vector& w, const Matrix& h, Eigen::Index q) {
  const Eigen::Index d = w.size();
  std::vector<Eigen::Index> s;
  for (Eigen::Index j = 0; j < d; ++j)
    if (j != q) s.push_back(j);
  const auto m = static_cast<Eigen::Index>(s.size());
  Matrix hss(m, m);
  Vector hsq(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    hsq(a) = h(s[a], q);
    for (Eigen::Index b = 0; b < m; ++b) hss(a, b) = h(s[a], s[b]);
  }
  const Vector delta = hss.fullPivLu().solve(hsq * w(q));
  Vector v = Vector::Zero(d);
  for (Eigen::Index a = 0; a < m; ++a) v(s[a]) = w(s[a]) + delta(a);
  return v;
}

double output_error(const Matrix& x, const Vector& w, const Vector& v) { return (x * (w - v)).squaredNorm(); }

}  // namespace

TEST(RowBudgets, ExtraKeepsGoToFirstRows) {
  EXPECT_EQ(row_budgets(3, 4, 7), (std::vector<std::size_t>{3, 2, 2}));
  EXPECT_EQ(row_budgets(2, 5, 0), (std::vector<std::size_t>{0, 0}));
  EXPECT_THROW(row_budgets(2, 2, 5), InputError);
}

TEST(TopK, TiesToLowerIndex) {
  const std::vector<double> s = {1, 3, 3, 2};
  EXPECT_EQ(top_k_indices(s, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(top_k_indices(s, 1), (std::vector<std::size_t>{1}));
}

TEST(Wanda, WeightedMagnitudeExample) {
  const auto layer = row_layer({1, -2, 3});
  const auto mask = wanda_prune_layer(layer, diag_activations({3, 1, 1}), 2);
  EXPECT_EQ(mask.keep, (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(Wanda, NormExponentChangesChoice) {
  const auto layer = row_layer({2, 1});
  const Matrix x = diag_activations({1, 1.5});
  EXPECT_EQ(wanda_prune_layer(layer, x, 1, {WandaGroup::kPerRow, 1}).keep, (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(wanda_prune_layer(layer, x, 1, {WandaGroup::kPerRow, 2}).keep, (std::vector<std::uint8_t>{0, 1}));
  EXPECT_THROW(wanda_scores(layer, x, 3), InputError);
}

TEST(Wanda, PerRowBudgetsAndShapeErrors) {
  std::mt19937_64 gen(5);
  const auto layer = dense_layer("L", 4, 6, gen);
  const Matrix x = random_matrix(10, 6, gen);
  const auto mask = wanda_prune_layer(layer, x, 10);
  EXPECT_EQ(mask.kept(), 10u);
  for (std::size_t r = 0; r < 4; ++r) {
    std::size_t k = 0;
    for (std::size_t c = 0; c < 6; ++c) k += mask.kept_at(r, c);
    EXPECT_EQ(k, r < 2 ? 3u : 2u);
  }
  EXPECT_THROW(wanda_prune_layer(layer, random_matrix(10, 5, gen), 10), DimensionError);
  EXPECT_THROW(wanda_prune_layer(layer, x, 25), InputError);
}

TEST(Wanda, EqualNormsReduceToMagnitude) {
  std::mt19937_64 gen(6);
  std::bernoulli_distribution coin;
  for (int trial = 0; trial < 20; ++trial) {
    const auto layer = dense_layer("L", 5, 7, gen);
    Matrix x(9, 7);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = coin(gen) ? 1.5 : -1.5;
    const auto keep = static_cast<std::size_t>(trial + 5);
    EXPECT_EQ(wanda_prune_layer(layer, x, keep, {WandaGroup::kPerLayer, 1}),
              magnitude_prune_layer(layer, keep));
  }
}

TEST(Magnitude, KeepsLargestAbsolute) {
  const auto mask = magnitude_prune_layer(row_layer({1, -3, 2, 0.5}), 2);
  EXPECT_EQ(mask.keep, (std::vector<std::uint8_t>{0, 1, 1, 0}));
}

TEST(Magnitude, MatchesSortOracle) {
  std::mt19937_64 gen(7);
  const auto layer = dense_layer("L", 6, 8, gen);
  const auto mask = magnitude_prune_layer(layer, 20);
  std::vector<double> a;
  for (double v : layer.weight.values()) a.push_back(std::abs(v));
  std::vector<double> sorted = a;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(mask.keep[i] != 0, a[i] >= sorted[19]);
}

TEST(Hessian, InverseIsAccurate) {
  std::mt19937_64 gen(8);
  const Matrix x = random_matrix(40, 12, gen);
  const auto h = HessianState::from_activations(x, {});
  const Matrix id = h.h * h.h_inv;
  EXPECT_LE((id - Matrix::Identity(12, 12)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_DOUBLE_EQ(h.lambda, 0.01 * (x.transpose() * x).diagonal().mean());
  EXPECT_THROW(HessianState::from_activations(Matrix::Zero(3, 3), SparseGptOptions{0.0, 0.01}), NumericalError);
}

TEST(SparseGpt, IdentityHessianIsMagnitudePruning) {
  std::mt19937_64 gen(9);
  const auto layer = dense_layer("L", 3, 5, gen);
  const auto r = sparsegpt_prune_layer(layer, Matrix::Identity(5, 5), 9, SparseGptOptions{0.0, 0.0});
  for (std::size_t row = 0; row < 3; ++row) {
    std::vector<double> w(layer.weight.values().begin() + static_cast<std::ptrdiff_t>(row * 5),
                          layer.weight.values().begin() + static_cast<std::ptrdiff_t>(row * 5 + 5));
    std::vector<double> a = w;
    for (auto& v : a) v = std::abs(v);
    const auto keep = top_k_indices(a, 3);
    for (std::size_t c = 0; c < 5; ++c) {
      const bool kept = std::find(keep.begin(), keep.end(), c) != keep.end();
      EXPECT_EQ(r.mask.kept_at(row, c), kept);
      EXPECT_EQ(r.weight.at(row, c), kept ? w[c] : 0.0);
    }
  }
}

TEST(SparseGpt, SingleRemovalMatchesLeastSquares) {
  std::mt19937_64 gen(10);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 3 + trial % 6;
    const Matrix x = random_matrix(2 * d, d, gen);
    const auto h = HessianState::from_activations(x, {});
    const Vector w = random_matrix(d, 1, gen);
    std::vector<std::uint8_t> kept;
    const Vector v = obs_prune_row(w, h.h_inv, 1, kept);
    const auto q = static_cast<Eigen::Index>(std::find(kept.begin(), kept.end(), 0) - kept.begin());
    const Vector oracle = least_squares_removal(w, h.h, q);
    EXPECT_LE((v - oracle).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(SparseGpt, TwoByTwoEnumeration) {
  // Only two candidate masks; OBS picks the one with the smaller compensated error.
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = random_matrix(6, 2, gen);
    const auto h = HessianState::from_activations(x, SparseGptOptions{0.0, 0.01});
    const Vector w = random_matrix(2, 1, gen);
    std::vector<std::uint8_t> kept;
    const Vector v = obs_prune_row(w, h.h_inv, 1, kept);
    const double e0 = output_error(x, w, least_squares_removal(w, h.h, 0));
    const double e1 = output_error(x, w, least_squares_removal(w, h.h, 1));
    EXPECT_LE(output_error(x, w, v), std::min(e0, e1) + 1e-12);
  }
}

TEST(SparseGpt, LargeDampingApproachesMagnitude) {
  std::mt19937_64 gen(12);
  const auto layer = dense_layer("L", 4, 6, gen);
  const Matrix x = random_matrix(12, 6, gen);
  const auto r = sparsegpt_prune_layer(layer, x, 12, SparseGptOptions{1e9, 0.01});
  EXPECT_EQ(r.mask.keep, wanda_prune_layer(layer, Matrix::Identity(6, 6), 12).keep);
  for (std::size_t i = 0; i < layer.numel(); ++i) {
    if (r.mask.keep[i]) EXPECT_NEAR(r.weight[i], layer.weight[i], 1e-6);
  }
}

TEST(SparseGpt, BeatsPlainMaskingOnReconstruction) {
  std::mt19937_64 gen(13);
  int wins = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    const auto layer = dense_layer("L", 6, 10, gen);
    const Matrix x = random_matrix(30, 10, gen);
    const auto sg = sparsegpt_prune_layer(layer, x, 30);
    Tensor masked = layer.weight;
    apply_mask(masked, wanda_prune_layer(layer, x, 30));
    wins += reconstruction_error(x, layer.weight, sg.weight) <= reconstruction_error(x, layer.weight, masked);
  }
  EXPECT_GE(wins, static_cast<int>(0.95 * trials));
}

TEST(SparseGpt, KeepAllIsUnchanged) {
  std::mt19937_64 gen(14);
  const auto layer = dense_layer("L", 3, 4, gen);
  const auto r = sparsegpt_prune_layer(layer, random_matrix(8, 4, gen), 12);
  EXPECT_EQ(r.weight, layer.weight);
  EXPECT_EQ(r.mask.kept(), 12u);
}

TEST(Sequential, NoPruningPlanIsNoOp) {
  std::mt19937_64 gen(15);
  const auto model = random_mlp({5, 8, 6, 3}, gen);
  const auto batch = random_regression_batch(6, 2, 5, 3, gen);
  const auto plan = uniform_plan(model, 0.0);
  for (auto m : {FineMethod::kWanda, FineMethod::kSparseGpt, FineMethod::kMagnitude}) {
    const auto r = sequential_prune(model, plan, batch, m);
    EXPECT_TRUE(r.model == model);
    EXPECT_EQ(r.masks.kept(), model.prunable_parameter_count());
  }
}

TEST(Sequential, EachLayerSeesPrunedPrefix) {
  std::mt19937_64 gen(16);
  const auto model = random_mlp({6, 10, 8, 4}, gen, Activation::kGelu);
  const auto batch = random_regression_batch(8, 2, 6, 4, gen);
  const auto plan = uniform_plan(model, 0.5);
  for (auto m : {FineMethod::kWanda, FineMethod::kSparseGpt}) {
    const auto r = sequential_prune(model, plan, batch, m, {}, true);
    ASSERT_EQ(r.recorded_inputs.size(), 3u);
    // Fresh forward through the final pruned model reproduces each recorded input.
    const auto fresh = forward_with_activations(r.model, batch);
    for (const auto& [name, x] : r.recorded_inputs) {
      EXPECT_LE((x - fresh.activations.at(name)).cwiseAbs().maxCoeff(), 1e-12) << name;
    }
    // The first layer's input is the dense one; later layers differ from it.
    const auto dense = forward_with_activations(model, batch);
    EXPECT_TRUE(r.recorded_inputs[0].second == dense.activations.at("L0"));
    EXPECT_FALSE(r.recorded_inputs[1].second == dense.activations.at("L1"));
  }
}

TEST(Sequential, HonorsGlobalBudgetAndFrozenLayers) {
  std::mt19937_64 gen(17);
  auto blocks = random_mlp({20, 25, 12, 6}, gen).blocks();
  blocks[1].layers[0].frozen = true;
  const ModelGraph model(blocks, LossKind::kMse);
  const auto batch = random_regression_batch(8, 2, 20, 6, gen);
  EXPECT_EQ(model.prunable_parameter_count(), 500u + 72u);
  const auto plan = uniform_plan(model, 0.5);
  const auto r = sequential_prune(model, plan, batch, FineMethod::kWanda);
  EXPECT_EQ(r.masks.kept(), plan.n_select);
  EXPECT_EQ(r.masks.layers.size(), 2u);
  EXPECT_TRUE(r.model.layer("L1").weight == model.layer("L1").weight);
}

TEST(Sequential, RejectsInvalidPlan) {
  std::mt19937_64 gen(18);
  const auto model = random_mlp({4, 4, 2}, gen);
  const auto batch = random_regression_batch(2, 1, 4, 2, gen);
  auto plan = uniform_plan(model, 0.5);
  plan.layers[0].keep += 1;
  EXPECT_THROW(sequential_prune(model, plan, batch, FineMethod::kWanda), InputError);
}
