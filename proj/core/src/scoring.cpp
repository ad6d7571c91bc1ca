#include "cfprune/scoring.hpp"

#include <cmath>

#include "cfprune/error.hpp"

namespace cfprune {

std::string_view to_string(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::kMagnitude:
      return "magnitude";
    case ScoreMethod::kFirstOrder:
      return "first_order";
    case ScoreMethod::kZerothOrder:
      return "zeroth_order";
    case ScoreMethod::kUniform:
      return "uniform";
    case ScoreMethod::kLocal:
      return "local";
  }
  return "magnitude";
}

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::kSum:
      return "sum";
    case Aggregation::kMean:
      return "mean";
    case Aggregation::kScalar:
      return "scalar";
  }
  return "sum";
}

ScoreMethod parse_score_method(std::string_view s) {
  if (s == "magnitude") return ScoreMethod::kMagnitude;
  if (s == "first_order") return ScoreMethod::kFirstOrder;
  if (s == "zeroth_order") return ScoreMethod::kZerothOrder;
  if (s == "uniform") return ScoreMethod::kUniform;
  if (s == "local") return ScoreMethod::kLocal;
  throw InputError("unknown score method '" + std::string(s) + "'");
}

Aggregation parse_aggregation(std::string_view s) {
  if (s == "sum") return Aggregation::kSum;
  if (s == "mean") return Aggregation::kMean;
  if (s == "scalar") return Aggregation::kScalar;
  throw InputError("unknown aggregation '" + std::string(s) + "'");
}

std::optional<double> ScoreMap::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e.score;
  }
  return std::nullopt;
}

double ScoreMap::total() const {
  double s = 0.0;
  for (const auto& e : entries) s += e.score;
  return s;
}

void ScoreMap::validate() const {
  for (const auto& e : entries) {
    if (!std::isfinite(e.score) || e.score < 0.0) {
      throw InputError("score for '" + e.name + "' must be finite and nonnegative, got " +
                       std::to_string(e.score));
    }
  }
}

ElementScores magnitude_scores(const ModelGraph& model) {
  ElementScores out;
  for (auto i : model.prunable_layers()) {
    const auto& l = model.layer(i);
    Tensor s = l.weight;
    for (double& v : s.data()) v = std::abs(v);
    out.push_back({l.name, std::move(s)});
  }
  return out;
}

ElementScores first_order_saliency(const ModelGraph& model, const CalibrationSet& batch) {
  const auto grads = compute_gradients(model, batch);
  ElementScores out;
  for (auto i : model.prunable_layers()) {
    const auto& l = model.layer(i);
    Tensor s = l.weight;
    const auto& g = grads.weight[i];
    for (std::size_t j = 0; j < s.numel(); ++j) s[j] = std::abs(s[j]) * std::abs(g.data()[j]);
    out.push_back({l.name, std::move(s)});
  }
  return out;
}

ScoreMap aggregate_to_layers(const ElementScores& scores, Aggregation mode, ScoreMethod method) {
  if (mode == Aggregation::kScalar) throw InputError("element scores aggregate by sum or mean only");
  ScoreMap out;
  out.method = method;
  out.aggregation = mode;
  for (const auto& layer : scores) {
    if (layer.scores.empty()) throw InputError("layer '" + layer.name + "' has no elements to aggregate");
    double total = 0.0;
    for (double v : layer.scores.values()) {
      if (v < 0.0 || !std::isfinite(v)) {
        throw InputError("element scores for '" + layer.name + "' must be finite and nonnegative");
      }
      total += v;
    }
    if (mode == Aggregation::kMean) total /= static_cast<double>(layer.scores.numel());
    out.entries.push_back({layer.name, total});
  }
  return out;
}

BlockScores aggregate_to_blocks(const ScoreMap& scores, const ModelGraph& model) {
  scores.validate();
  BlockScores out;
  out.scores.method = scores.method;
  out.scores.aggregation = scores.aggregation;
  out.scores.seed = scores.seed;
  out.scores.sample_count = scores.sample_count;

  std::vector<double> block_score(model.block_count(), 0.0);
  std::vector<std::size_t> block_size(model.block_count(), 0);
  std::vector<std::vector<std::string>> members(model.block_count());
  for (const auto& e : scores.entries) {
    const auto idx = model.find_layer(e.name);
    if (!idx) throw InputError("scored layer '" + e.name + "' does not belong to any block");
    const auto b = model.block_of(*idx);
    block_score[b] += e.score;
    block_size[b] += model.layer(*idx).numel();
    members[b].push_back(e.name);
  }
  for (std::size_t b = 0; b < model.block_count(); ++b) {
    if (members[b].empty()) continue;
    out.scores.entries.push_back({model.block_name(b), block_score[b]});
    out.sizes.push_back(block_size[b]);
    out.members.push_back(std::move(members[b]));
  }
  return out;
}

}  // namespace cfprune
