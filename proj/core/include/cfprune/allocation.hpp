#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfprune/model.hpp"
#include "cfprune/score_map.hpp"

namespace cfprune {

enum class Granularity { kLayer, kBlock };

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view s);

struct LayerAllocation {
  std::string name;
  std::string unit;  // the layer itself, or its block under block granularity
  std::size_t size = 0;
  std::size_t keep = 0;
  double sparsity = 0.0;  // 1 - keep / size

  friend bool operator==(const LayerAllocation&, const LayerAllocation&) = default;
};

struct SparsityPlan {
  double target_p = 0.0;
  double p_max = 1.0;
  Granularity granularity = Granularity::kLayer;
  std::size_t total_params = 0;
  std::size_t n_select = 0;  // round((1 - p) * total_params)
  std::vector<LayerAllocation> layers;  // prunable layers in model order

  const LayerAllocation* find(std::string_view name) const;
  std::size_t kept() const noexcept;

  friend bool operator==(const SparsityPlan&, const SparsityPlan&) = default;
};

// round((1 - p) * total)
std::size_t keep_budget(double p, std::size_t total);
// Smallest keep count whose sparsity does not exceed p_max.
std::size_t min_keep(std::size_t size, double p_max);

// Core allocation over abstract units: keep `min_keeps[u]` first, split the rest of
// `n_select` in proportion to `scores`, clamp units at their size and hand the excess
// to the others until nothing overflows, then round by largest remainder (ties to the
// lower index). Units that all score zero share leftovers in proportion to capacity.
std::vector<std::size_t> allocate_keeps(std::span<const double> scores,
                                        std::span<const std::size_t> sizes,
                                        std::span<const std::size_t> min_keeps, std::size_t n_select);

// Splits `total` over `weights` by largest remainder, never exceeding `caps`.
std::vector<std::size_t> largest_remainder(std::span<const double> weights,
                                           std::span<const std::size_t> caps, std::size_t total);

// Per-layer sparsities from a layer-level ScoreMap (coarse step).
SparsityPlan allocate_sparsity(const ScoreMap& scores, const ModelGraph& model, double target_p,
                               double p_max, Granularity granularity);

// Layer scores proportional to layer size; allocation then reproduces uniform sparsity.
ScoreMap uniform_scores(const ModelGraph& model);

// Sparsity ratio p_i = p for every prunable layer with the exact global budget.
SparsityPlan uniform_plan(const ModelGraph& model, double target_p);

// All violated plan invariants; empty when the plan is valid.
std::vector<std::string> validate_plan(const SparsityPlan& plan, const ModelGraph& model);

}  // namespace cfprune
