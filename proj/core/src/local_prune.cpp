#include "cfprune/local_prune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfprune/error.hpp"

namespace cfprune {

std::string_view to_string(FineMethod m) {
  switch (m) {
    case FineMethod::kWanda:
      return "wanda";
    case FineMethod::kSparseGpt:
      return "sparsegpt";
    case FineMethod::kMagnitude:
      return "magnitude";
  }
  return "wanda";
}

FineMethod parse_fine_method(std::string_view s) {
  if (s == "wanda") return FineMethod::kWanda;
  if (s == "sparsegpt") return FineMethod::kSparseGpt;
  if (s == "magnitude") return FineMethod::kMagnitude;
  throw InputError("unknown fine method '" + std::string(s) + "'");
}

std::string_view to_string(WandaGroup g) { return g == WandaGroup::kPerRow ? "per_row" : "per_layer"; }

WandaGroup parse_wanda_group(std::string_view s) {
  if (s == "per_row") return WandaGroup::kPerRow;
  if (s == "per_layer") return WandaGroup::kPerLayer;
  throw InputError("unknown wanda group '" + std::string(s) + "'");
}

std::vector<std::size_t> row_budgets(std::size_t rows, std::size_t cols, std::size_t keep_count) {
  if (rows == 0 || keep_count > rows * cols) {
    throw InputError("keep count " + std::to_string(keep_count) + " infeasible for a " +
                     std::to_string(rows) + "x" + std::to_string(cols) + " layer");
  }
  std::vector<std::size_t> budgets(rows, keep_count / rows);
  for (std::size_t r = 0; r < keep_count % rows; ++r) ++budgets[r];
  return budgets;
}

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

namespace {

void check_keep(const LayerSpec& layer, std::size_t keep_count) {
  if (keep_count > layer.numel()) {
    throw InputError("keep count " + std::to_string(keep_count) + " exceeds size of layer '" +
                     layer.name + "'");
  }
}

void check_activations(const LayerSpec& layer, const Matrix& activations) {
  if (static_cast<std::size_t>(activations.cols()) != layer.d_in()) {
    throw DimensionError("activations for '" + layer.name + "' have width " +
                         std::to_string(activations.cols()) + ", expected " + std::to_string(layer.d_in()));
  }
}

LayerMask mask_from_scores(const LayerSpec& layer, const Tensor& scores, std::size_t keep_count,
                           bool per_row) {
  LayerMask mask{layer.name, layer.d_out(), layer.d_in(),
                 std::vector<std::uint8_t>(layer.numel(), 0)};
  if (!per_row) {
    for (auto i : top_k_indices(scores.values(), keep_count)) mask.keep[i] = 1;
    return mask;
  }
  const auto budgets = row_budgets(layer.d_out(), layer.d_in(), keep_count);
  const std::size_t cols = layer.d_in();
  for (std::size_t r = 0; r < layer.d_out(); ++r) {
    const auto row = scores.values().subspan(r * cols, cols);
    for (auto c : top_k_indices(row, budgets[r])) mask.keep[r * cols + c] = 1;
  }
  return mask;
}

}  // namespace

Vector activation_column_norms(const Matrix& activations) {
  return activations.colwise().norm().transpose();
}

Tensor wanda_scores(const LayerSpec& layer, const Matrix& activations, int norm_exponent) {
  check_activations(layer, activations);
  if (norm_exponent != 1 && norm_exponent != 2) throw InputError("wanda norm exponent must be 1 or 2");
  const Vector norms = activation_column_norms(activations);
  Tensor s = layer.weight;
  const std::size_t cols = layer.d_in();
  for (std::size_t r = 0; r < layer.d_out(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double n = norms(static_cast<Eigen::Index>(c));
      s.at(r, c) = std::abs(s.at(r, c)) * (norm_exponent == 1 ? n : n * n);
    }
  }
  return s;
}

LayerMask wanda_prune_layer(const LayerSpec& layer, const Matrix& activations, std::size_t keep_count,
                            const WandaOptions& options) {
  check_keep(layer, keep_count);
  const Tensor scores = wanda_scores(layer, activations, options.norm_exponent);
  return mask_from_scores(layer, scores, keep_count, options.group == WandaGroup::kPerRow);
}

LayerMask magnitude_prune_layer(const LayerSpec& layer, std::size_t keep_count) {
  check_keep(layer, keep_count);
  Tensor scores = layer.weight;
  for (double& v : scores.data()) v = std::abs(v);
  return mask_from_scores(layer, scores, keep_count, false);
}

HessianState HessianState::from_activations(const Matrix& activations, const SparseGptOptions& options) {
  HessianState state;
  state.h = activations.transpose() * activations;
  const auto d = state.h.rows();
  state.lambda = options.lambda ? *options.lambda : options.damping_fraction * state.h.diagonal().mean();
  if (state.lambda < 0.0 || !std::isfinite(state.lambda)) throw InputError("damping must be nonnegative");
  state.h.diagonal().array() += state.lambda;

  Eigen::LLT<Matrix> llt(state.h);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
    throw NumericalError("activation Hessian is singular or ill-conditioned (lambda = " +
                         std::to_string(state.lambda) + "); increase the damping");
  }
  state.h_inv = llt.solve(Matrix::Identity(d, d));
  // Symmetrize away solve round-off.
  state.h_inv = 0.5 * (state.h_inv + state.h_inv.transpose()).eval();
  return state;
}

Vector obs_prune_row(const Vector& row, const Matrix& h_inv, std::size_t prune_count,
                     std::vector<std::uint8_t>& kept) {
  const auto d = row.size();
  const auto n = static_cast<std::size_t>(d);
  if (prune_count > n) throw InputError("cannot prune more weights than the row holds");
  kept.assign(n, 1);
  Vector w = row;
  if (prune_count == 0) return w;

  std::vector<double> scores(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    scores[j] = w(jj) * w(jj) / h_inv(jj, jj);
  }
  auto keep_idx = top_k_indices(scores, n - prune_count);
  std::fill(kept.begin(), kept.end(), 0);
  for (auto j : keep_idx) kept[j] = 1;

  Matrix hinv = h_inv;
  for (std::size_t j = 0; j < n; ++j) {
    if (kept[j]) continue;
    const auto q = static_cast<Eigen::Index>(j);
    const double diag = hinv(q, q);
    if (!(diag > 0.0)) throw NumericalError("non-positive inverse Hessian diagonal during OBS update");
    const Vector col = hinv.col(q);
    w -= (w(q) / diag) * col;
    w(q) = 0.0;
    hinv.noalias() -= (col * col.transpose()) / diag;
  }
  return w;
}

SparseGptResult sparsegpt_prune_layer(const LayerSpec& layer, const Matrix& activations,
                                      std::size_t keep_count, const SparseGptOptions& options) {
  check_keep(layer, keep_count);
  check_activations(layer, activations);
  SparseGptResult out{LayerMask{layer.name, layer.d_out(), layer.d_in(),
                                std::vector<std::uint8_t>(layer.numel(), 0)},
                      layer.weight};
  if (keep_count == layer.numel()) {
    out.mask = LayerMask::all_kept(layer.name, layer.d_out(), layer.d_in());
    return out;
  }
  const auto hessian = HessianState::from_activations(activations, options);
  const auto budgets = row_budgets(layer.d_out(), layer.d_in(), keep_count);
  const std::size_t cols = layer.d_in();
  auto w = out.weight.matrix();
  std::vector<std::uint8_t> kept;
  for (std::size_t r = 0; r < layer.d_out(); ++r) {
    const auto rr = static_cast<Eigen::Index>(r);
    const Vector row = w.row(rr).transpose();
    const Vector updated = obs_prune_row(row, hessian.h_inv, cols - budgets[r], kept);
    w.row(rr) = updated.transpose();
    for (std::size_t c = 0; c < cols; ++c) {
      out.mask.keep[r * cols + c] = kept[c];
      if (!kept[c]) w(rr, static_cast<Eigen::Index>(c)) = 0.0;
    }
  }
  if (!out.weight.all_finite()) {
    throw NumericalError("OBS update produced non-finite weights in '" + layer.name + "'");
  }
  return out;
}

double reconstruction_error(const Matrix& activations, const Tensor& dense, const Tensor& pruned) {
  const Matrix diff = dense.matrix() - pruned.matrix();
  return (activations * diff.transpose()).squaredNorm();
}

SequentialResult sequential_prune(const ModelGraph& model, const SparsityPlan& plan,
                                  const CalibrationSet& batch, FineMethod method,
                                  const FineOptions& options, bool record_inputs) {
  if (const auto violations = validate_plan(plan, model); !violations.empty()) {
    throw InputError("sparsity plan rejected: " + violations.front());
  }
  SequentialResult result{model, {}, {}, {}};
  Matrix x = encode_batch(model, batch);
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const auto& layer = result.model.layer(i);
    const auto* alloc = plan.find(layer.name);
    if (layer.frozen || alloc == nullptr) {
      x = apply_layer(layer, x);
      continue;
    }
    try {
      Tensor pruned = layer.weight;
      LayerMask mask;
      switch (method) {
        case FineMethod::kWanda:
          mask = wanda_prune_layer(layer, x, alloc->keep, options.wanda);
          apply_mask(pruned, mask);
          break;
        case FineMethod::kMagnitude:
          mask = magnitude_prune_layer(layer, alloc->keep);
          apply_mask(pruned, mask);
          break;
        case FineMethod::kSparseGpt: {
          auto r = sparsegpt_prune_layer(layer, x, alloc->keep, options.sparsegpt);
          mask = std::move(r.mask);
          pruned = std::move(r.weight);
          break;
        }
      }
      const double err = reconstruction_error(x, layer.weight, pruned);
      const double base = (x * layer.weight.matrix().transpose()).squaredNorm();
      result.errors.push_back({layer.name, err, base > 0.0 ? err / base : 0.0});
      result.masks.layers.push_back(std::move(mask));
      if (record_inputs) result.recorded_inputs.emplace_back(layer.name, x);
      result.model.set_layer_weights(layer.name, std::move(pruned));
    } catch (const NumericalError& e) {
      throw NumericalError("pruning layer '" + layer.name + "': " + e.what());
    } catch (const InputError& e) {
      throw InputError("pruning layer '" + layer.name + "': " + e.what());
    }
    x = apply_layer(result.model.layer(i), x);
  }
  return result;
}

}  // namespace cfprune
