#pragma once

#include <string>
#include <vector>

#include "cfprune/model.hpp"
#include "cfprune/score_map.hpp"

namespace cfprune {

// Elementwise importance for one layer, same shape as its weight.
struct LayerElementScores {
  std::string name;
  Tensor scores;
};

using ElementScores = std::vector<LayerElementScores>;

// |W_ij| for every prunable layer.
ElementScores magnitude_scores(const ModelGraph& model);

// |W_ij| * |dL/dW_ij| with the gradient of the batch-mean loss.
ElementScores first_order_saliency(const ModelGraph& model, const CalibrationSet& batch);

// Layer score as the sum or mean of its element scores.
ScoreMap aggregate_to_layers(const ElementScores& scores, Aggregation mode, ScoreMethod method);

struct BlockScores {
  ScoreMap scores;                  // entries keyed by block name
  std::vector<std::size_t> sizes;   // parameter count per entry
  std::vector<std::vector<std::string>> members;  // scored layers per entry
};

// Block score = sum of member layer scores. Blocks without scored layers are omitted.
BlockScores aggregate_to_blocks(const ScoreMap& scores, const ModelGraph& model);

}  // namespace cfprune
