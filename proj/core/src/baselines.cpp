#include "cfprune/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfprune/error.hpp"

namespace cfprune {

IterSchedule IterSchedule::linear(double p, std::size_t iterations) {
  if (iterations == 0) throw InputError("iterative schedule needs at least one iteration");
  IterSchedule s;
  for (std::size_t t = 1; t <= iterations; ++t) {
    s.targets.push_back(t == iterations ? p : p * static_cast<double>(t) / static_cast<double>(iterations));
  }
  return s;
}

void IterSchedule::validate(double p) const {
  if (targets.empty()) throw InputError("iterative schedule is empty");
  if (targets.back() != p) throw InputError("iterative schedule must end at the target sparsity");
  for (std::size_t t = 1; t < targets.size(); ++t) {
    if (!(targets[t] > targets[t - 1])) throw InputError("iterative schedule must be strictly increasing");
  }
  if (targets.front() < 0.0) throw InputError("iterative schedule targets must be nonnegative");
}

PruneMask global_select(const ElementScores& scores, const PruneMask* alive, std::size_t keep) {
  struct Candidate {
    double score;
    std::size_t layer;
    std::size_t index;
  };
  std::vector<Candidate> candidates;
  PruneMask out;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    const auto& s = scores[l];
    out.layers.push_back({s.name, s.scores.rows(), s.scores.cols(),
                          std::vector<std::uint8_t>(s.scores.numel(), 0)});
    const LayerMask* prev = alive ? alive->find(s.name) : nullptr;
    for (std::size_t i = 0; i < s.scores.numel(); ++i) {
      if (prev && !prev->keep[i]) continue;
      candidates.push_back({s.scores[i], l, i});
    }
  }
  if (keep > candidates.size()) {
    throw InputError("cannot keep " + std::to_string(keep) + " weights from " +
                     std::to_string(candidates.size()) + " alive");
  }
  // Candidates are generated in (layer, index) order, so stability gives the tie rule.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  for (std::size_t k = 0; k < keep; ++k) out.layers[candidates[k].layer].keep[candidates[k].index] = 1;
  return out;
}

namespace {

void check_p(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw InputError("sparsity must lie in [0, 1), got " + std::to_string(p));
}

ModelGraph masked_copy(const ModelGraph& model, const PruneMask& masks) {
  ModelGraph out = model;
  for (const auto& m : masks.layers) {
    Tensor w = out.layer(m.name).weight;
    apply_mask(w, m);
    out.set_layer_weights(m.name, std::move(w));
  }
  return out;
}

}  // namespace

GlobalPruneResult global_magnitude_prune(const ModelGraph& model, double p) {
  check_p(p);
  const auto scores = magnitude_scores(model);
  auto masks = global_select(scores, nullptr, keep_budget(p, model.prunable_parameter_count()));
  GlobalPruneResult out{masked_copy(model, masks), masks, {masks}};
  return out;
}

GlobalPruneResult iterative_gradient_prune(const ModelGraph& model, const CalibrationSet& batch, double p,
                                           const IterSchedule& schedule) {
  check_p(p);
  schedule.validate(p);
  const std::size_t total = model.prunable_parameter_count();
  GlobalPruneResult out{model, {}, {}};
  for (double target : schedule.targets) {
    const auto saliency = first_order_saliency(out.model, batch);
    out.masks = global_select(saliency, out.history.empty() ? nullptr : &out.masks,
                              keep_budget(target, total));
    out.model = masked_copy(model, out.masks);
    out.history.push_back(out.masks);
  }
  return out;
}

SequentialResult uniform_layerwise_prune(const ModelGraph& model, const CalibrationSet& batch, double p,
                                         FineMethod method, const FineOptions& options) {
  return sequential_prune(model, uniform_plan(model, p), batch, method, options);
}

ScoreMap local_scores(const ModelGraph& model, const CalibrationSet& batch, FineMethod method,
                      const FineOptions& options) {
  ScoreMap out;
  out.method = ScoreMethod::kLocal;
  out.aggregation = Aggregation::kSum;
  out.sample_count = batch.size();
  const auto fwd = forward_with_activations(model, batch);
  for (auto i : model.prunable_layers()) {
    const auto& layer = model.layer(i);
    const Matrix& x = fwd.activations.at(layer.name);
    double total = 0.0;
    switch (method) {
      case FineMethod::kWanda: {
        const Tensor s = wanda_scores(layer, x, options.wanda.norm_exponent);
        for (double v : s.values()) total += v;
        break;
      }
      case FineMethod::kSparseGpt: {
        const auto h = HessianState::from_activations(x, options.sparsegpt);
        const auto w = layer.weight.matrix();
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
          for (Eigen::Index c = 0; c < w.cols(); ++c) total += w(r, c) * w(r, c) / h.h_inv(c, c);
        }
        break;
      }
      case FineMethod::kMagnitude:
        for (double v : layer.weight.values()) total += std::abs(v);
        break;
    }
    out.entries.push_back({layer.name, total});
  }
  return out;
}

SparsityPlan local_score_ratios(const ModelGraph& model, const CalibrationSet& batch, double p,
                                double p_max, FineMethod method, const FineOptions& options,
                                Granularity granularity) {
  return allocate_sparsity(local_scores(model, batch, method, options), model, p, p_max, granularity);
}

}  // namespace cfprune
