#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfprune/allocation.hpp"
#include "cfprune/mask.hpp"
#include "cfprune/model.hpp"

namespace cfprune {

enum class FineMethod { kWanda, kSparseGpt, kMagnitude };
enum class WandaGroup { kPerRow, kPerLayer };

std::string_view to_string(FineMethod m);
FineMethod parse_fine_method(std::string_view s);
std::string_view to_string(WandaGroup g);
WandaGroup parse_wanda_group(std::string_view s);

struct WandaOptions {
  WandaGroup group = WandaGroup::kPerRow;
  int norm_exponent = 1;  // 1: |W| * ||X_j||, 2: |W| * ||X_j||^2
};

struct SparseGptOptions {
  // Absolute damping; when unset, damping_fraction * mean(diag(X^T X)).
  std::optional<double> lambda;
  double damping_fraction = 0.01;
};

struct FineOptions {
  WandaOptions wanda;
  SparseGptOptions sparsegpt;
};

// Per-row keep counts summing to `keep_count`: the first (keep_count mod rows) rows
// take one extra.
std::vector<std::size_t> row_budgets(std::size_t rows, std::size_t cols, std::size_t keep_count);

// Indices of the `k` largest scores, ties to the lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);

// ||X_j||_2 over the rows of the activation matrix.
Vector activation_column_norms(const Matrix& activations);
Tensor wanda_scores(const LayerSpec& layer, const Matrix& activations, int norm_exponent);

LayerMask wanda_prune_layer(const LayerSpec& layer, const Matrix& activations, std::size_t keep_count,
                            const WandaOptions& options = {});

// Keeps the keep_count largest |W_ij| over the whole layer, ties to the lower flat index.
LayerMask magnitude_prune_layer(const LayerSpec& layer, std::size_t keep_count);

// Damped activation Gram matrix and its inverse.
struct HessianState {
  Matrix h;  // X^T X + lambda I, [d_in, d_in]
  double lambda = 0.0;
  Matrix h_inv;

  static HessianState from_activations(const Matrix& activations, const SparseGptOptions& options);
};

// Row-wise optimal-brain-surgeon pruning of one row: picks the `prune_count` lowest
// w_j^2 / [H^-1]_jj, then removes them in column order, each time moving the row by
// -(w_q / [H^-1]_qq) H^-1[:, q] and downdating H^-1 so later removals stay optimal.
// Returns the compensated row; `kept` receives the row's mask.
Vector obs_prune_row(const Vector& row, const Matrix& h_inv, std::size_t prune_count,
                     std::vector<std::uint8_t>& kept);

struct SparseGptResult {
  LayerMask mask;
  Tensor weight;
};

SparseGptResult sparsegpt_prune_layer(const LayerSpec& layer, const Matrix& activations,
                                      std::size_t keep_count, const SparseGptOptions& options = {});

// Layer-output reconstruction error over the calibration activations.
struct LayerReconstruction {
  std::string name;
  double squared_error = 0.0;   // ||X (W - W_hat)^T||_F^2
  double relative_error = 0.0;  // divided by ||X W^T||_F^2 (0 when that is 0)
};

double reconstruction_error(const Matrix& activations, const Tensor& dense, const Tensor& pruned);

struct SequentialResult {
  ModelGraph model;
  PruneMask masks;
  std::vector<LayerReconstruction> errors;
  // Input activations each pruned layer was pruned with, when requested.
  std::vector<std::pair<std::string, Matrix>> recorded_inputs;
};

// Prunes layers in model order, each with activations propagated through the
// already-pruned prefix. Frozen layers are passed through untouched.
SequentialResult sequential_prune(const ModelGraph& model, const SparsityPlan& plan,
                                  const CalibrationSet& batch, FineMethod method,
                                  const FineOptions& options = {}, bool record_inputs = false);

}  // namespace cfprune
