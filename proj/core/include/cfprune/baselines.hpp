#pragma once

#include <cstddef>
#include <vector>

#include "cfprune/allocation.hpp"
#include "cfprune/local_prune.hpp"
#include "cfprune/scoring.hpp"

namespace cfprune {

// Per-iteration sparsity targets of an iterative global pruning run.
struct IterSchedule {
  std::vector<double> targets;

  // targets[t] = p * (t + 1) / iterations
  static IterSchedule linear(double p, std::size_t iterations = 3);
  // Throws InputError unless strictly increasing and ending at p.
  void validate(double p) const;
};

struct GlobalPruneResult {
  ModelGraph model;
  PruneMask masks;
  // Mask after each iteration (a single entry for one-shot methods).
  std::vector<PruneMask> history;
};

// Keeps the `keep` highest element scores across all prunable layers among the
// currently alive weights; ties go to the lower (layer order, flat index) position.
PruneMask global_select(const ElementScores& scores, const PruneMask* alive, std::size_t keep);

GlobalPruneResult global_magnitude_prune(const ModelGraph& model, double p);

// Global |W| * |grad| pruning, recomputing saliency on the masked model each
// iteration. Pruned weights never come back.
GlobalPruneResult iterative_gradient_prune(const ModelGraph& model, const CalibrationSet& batch, double p,
                                           const IterSchedule& schedule);

// Same ratio p for every prunable layer, then the sequential fine step.
SequentialResult uniform_layerwise_prune(const ModelGraph& model, const CalibrationSet& batch, double p,
                                         FineMethod method, const FineOptions& options = {});

// Layer score = sum of the fine method's local element scores on dense activations.
ScoreMap local_scores(const ModelGraph& model, const CalibrationSet& batch, FineMethod method,
                      const FineOptions& options = {});

// Sparsity ratios derived from local scores (the ablation of the global coarse step).
SparsityPlan local_score_ratios(const ModelGraph& model, const CalibrationSet& batch, double p,
                                double p_max, FineMethod method, const FineOptions& options = {},
                                Granularity granularity = Granularity::kLayer);

}  // namespace cfprune
