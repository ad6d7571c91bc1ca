#include "cfprune/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfprune/error.hpp"
#include "cfprune/scoring.hpp"

namespace cfprune {

std::string_view to_string(Granularity g) { return g == Granularity::kLayer ? "layer" : "block"; }

Granularity parse_granularity(std::string_view s) {
  if (s == "layer") return Granularity::kLayer;
  if (s == "block") return Granularity::kBlock;
  throw InputError("unknown granularity '" + std::string(s) + "'");
}

const LayerAllocation* SparsityPlan::find(std::string_view name) const {
  for (const auto& l : layers) {
    if (l.name == name) return &l;
  }
  return nullptr;
}

std::size_t SparsityPlan::kept() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.keep;
  return n;
}

std::size_t keep_budget(double p, std::size_t total) {
  return static_cast<std::size_t>(std::llround((1.0 - p) * static_cast<double>(total)));
}

std::size_t min_keep(std::size_t size, double p_max) {
  // Slack absorbs representation error such as 0.6 * 100 = 59.999...
  const double max_pruned = std::floor(p_max * static_cast<double>(size) + 1e-9);
  const auto pruned = static_cast<std::size_t>(std::clamp(max_pruned, 0.0, static_cast<double>(size)));
  return size - pruned;
}

std::vector<std::size_t> largest_remainder(std::span<const double> weights,
                                           std::span<const std::size_t> caps, std::size_t total) {
  const std::size_t n = weights.size();
  if (caps.size() != n) throw DimensionError("weights and caps differ in length");
  const std::size_t capacity = std::accumulate(caps.begin(), caps.end(), std::size_t{0});
  if (total > capacity) {
    throw FeasibilityError("cannot place " + std::to_string(total) + " units into capacity " +
                           std::to_string(capacity));
  }

  // Proportional shares with overflow clamping, iterated to a fixed point. The clamped
  // set only grows, so this terminates in at most n rounds.
  std::vector<double> share(n, 0.0);
  std::vector<bool> clamped(n, false);
  for (std::size_t u = 0; u < n; ++u) clamped[u] = caps[u] == 0;
  double remaining = static_cast<double>(total);
  for (;;) {
    double weight_sum = 0.0;
    std::size_t active = 0;
    for (std::size_t u = 0; u < n; ++u) {
      if (!clamped[u]) {
        weight_sum += weights[u];
        ++active;
      }
    }
    if (active == 0) break;
    const bool by_capacity = weight_sum <= 0.0;
    if (by_capacity) {
      weight_sum = 0.0;
      for (std::size_t u = 0; u < n; ++u) {
        if (!clamped[u]) weight_sum += static_cast<double>(caps[u]);
      }
    }
    bool overflow = false;
    for (std::size_t u = 0; u < n; ++u) {
      if (clamped[u]) continue;
      const double w = by_capacity ? static_cast<double>(caps[u]) : weights[u];
      share[u] = remaining * (w / weight_sum);
      if (share[u] >= static_cast<double>(caps[u])) overflow = true;
    }
    if (!overflow) break;
    for (std::size_t u = 0; u < n; ++u) {
      if (!clamped[u] && share[u] >= static_cast<double>(caps[u])) {
        clamped[u] = true;
        share[u] = static_cast<double>(caps[u]);
        remaining -= share[u];
      }
    }
    if (remaining <= 0.0) {
      for (std::size_t u = 0; u < n; ++u) {
        if (!clamped[u]) share[u] = 0.0;
      }
      break;
    }
  }

  std::vector<std::size_t> out(n);
  std::vector<double> remainder(n);
  std::size_t assigned = 0;
  for (std::size_t u = 0; u < n; ++u) {
    const double f = std::clamp(std::floor(share[u]), 0.0, static_cast<double>(caps[u]));
    out[u] = static_cast<std::size_t>(f);
    remainder[u] = share[u] - f;
    assigned += out[u];
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  while (assigned < total) {
    bool progressed = false;
    for (auto u : order) {
      if (assigned == total) break;
      if (out[u] < caps[u]) {
        ++out[u];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  // Rounding error can push the floors above the total; take back from the
  // smallest remainders.
  while (assigned > total) {
    for (auto it = order.rbegin(); it != order.rend() && assigned > total; ++it) {
      if (out[*it] > 0) {
        --out[*it];
        --assigned;
      }
    }
  }
  return out;
}

std::vector<std::size_t> allocate_keeps(std::span<const double> scores,
                                        std::span<const std::size_t> sizes,
                                        std::span<const std::size_t> min_keeps, std::size_t n_select) {
  const std::size_t n = scores.size();
  if (sizes.size() != n || min_keeps.size() != n) {
    throw DimensionError("scores, sizes and minimum keeps differ in length");
  }
  double score_sum = 0.0;
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0) throw InputError("scores must be finite and nonnegative");
    score_sum += s;
  }
  if (!(score_sum > 0.0)) throw InputError("all importance scores are zero");

  const std::size_t prepicked = std::accumulate(min_keeps.begin(), min_keeps.end(), std::size_t{0});
  if (prepicked > n_select) {
    throw FeasibilityError("maximum sparsity forces " + std::to_string(prepicked) +
                           " kept weights, above the budget of " + std::to_string(n_select));
  }
  std::vector<std::size_t> caps(n);
  for (std::size_t u = 0; u < n; ++u) {
    if (min_keeps[u] > sizes[u]) throw InputError("minimum keep exceeds unit size");
    caps[u] = sizes[u] - min_keeps[u];
  }
  auto extra = largest_remainder(scores, caps, n_select - prepicked);
  for (std::size_t u = 0; u < n; ++u) extra[u] += min_keeps[u];
  return extra;
}

namespace {

void check_targets(double target_p, double p_max) {
  if (!(target_p >= 0.0 && target_p < 1.0)) {
    throw InputError("target sparsity must lie in [0, 1), got " + std::to_string(target_p));
  }
  if (!(p_max > target_p && p_max <= 1.0)) {
    throw InputError("maximum sparsity must lie in (target, 1], got " + std::to_string(p_max));
  }
}

}  // namespace

SparsityPlan allocate_sparsity(const ScoreMap& scores, const ModelGraph& model, double target_p,
                               double p_max, Granularity granularity) {
  check_targets(target_p, p_max);
  scores.validate();

  const auto prunable = model.prunable_layers();
  if (prunable.empty()) throw InputError("model has no prunable layers");
  std::vector<double> layer_scores;
  for (auto i : prunable) {
    const auto s = scores.find(model.layer(i).name);
    if (!s) throw InputError("no score for prunable layer '" + model.layer(i).name + "'");
    layer_scores.push_back(*s);
  }
  for (const auto& e : scores.entries) {
    const auto idx = model.find_layer(e.name);
    if (!idx || model.layer(*idx).frozen) {
      throw InputError("score for '" + e.name + "' does not match a prunable layer");
    }
  }

  SparsityPlan plan;
  plan.target_p = target_p;
  plan.p_max = p_max;
  plan.granularity = granularity;
  plan.total_params = model.prunable_parameter_count();
  plan.n_select = keep_budget(target_p, plan.total_params);

  std::vector<std::size_t> sizes;
  std::vector<std::size_t> mins;
  for (auto i : prunable) {
    sizes.push_back(model.layer(i).numel());
    mins.push_back(min_keep(sizes.back(), p_max));
  }

  std::vector<std::size_t> keeps(prunable.size());
  std::vector<std::string> unit_of(prunable.size());
  if (granularity == Granularity::kLayer) {
    keeps = allocate_keeps(layer_scores, sizes, mins, plan.n_select);
    for (std::size_t k = 0; k < prunable.size(); ++k) unit_of[k] = model.layer(prunable[k]).name;
  } else {
    // Group prunable layers by block, in model order.
    std::vector<std::size_t> block_ids;
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t k = 0; k < prunable.size(); ++k) {
      const auto b = model.block_of(prunable[k]);
      auto it = std::find(block_ids.begin(), block_ids.end(), b);
      if (it == block_ids.end()) {
        block_ids.push_back(b);
        members.emplace_back();
        it = block_ids.end() - 1;
      }
      members[static_cast<std::size_t>(it - block_ids.begin())].push_back(k);
    }
    std::vector<double> block_scores(block_ids.size(), 0.0);
    std::vector<std::size_t> block_sizes(block_ids.size(), 0);
    std::vector<std::size_t> block_mins(block_ids.size(), 0);
    for (std::size_t b = 0; b < block_ids.size(); ++b) {
      for (auto k : members[b]) {
        block_scores[b] += layer_scores[k];
        block_sizes[b] += sizes[k];
        block_mins[b] += mins[k];
      }
    }
    const auto block_keeps = allocate_keeps(block_scores, block_sizes, block_mins, plan.n_select);
    for (std::size_t b = 0; b < block_ids.size(); ++b) {
      // Spread the block's keeps over its layers in proportion to their free capacity,
      // which gives every member (nearly) the same ratio.
      std::vector<double> weights;
      std::vector<std::size_t> caps;
      for (auto k : members[b]) {
        caps.push_back(sizes[k] - mins[k]);
        weights.push_back(static_cast<double>(caps.back()));
      }
      const auto extra = largest_remainder(weights, caps, block_keeps[b] - block_mins[b]);
      for (std::size_t m = 0; m < members[b].size(); ++m) {
        const auto k = members[b][m];
        keeps[k] = mins[k] + extra[m];
        unit_of[k] = model.block_name(block_ids[b]);
      }
    }
  }

  for (std::size_t k = 0; k < prunable.size(); ++k) {
    LayerAllocation a;
    a.name = model.layer(prunable[k]).name;
    a.unit = unit_of[k];
    a.size = sizes[k];
    a.keep = keeps[k];
    a.sparsity = 1.0 - static_cast<double>(a.keep) / static_cast<double>(a.size);
    plan.layers.push_back(std::move(a));
  }
  return plan;
}

ScoreMap uniform_scores(const ModelGraph& model) {
  ScoreMap out;
  out.method = ScoreMethod::kUniform;
  out.aggregation = Aggregation::kSum;
  for (auto i : model.prunable_layers()) {
    out.entries.push_back({model.layer(i).name, static_cast<double>(model.layer(i).numel())});
  }
  return out;
}

SparsityPlan uniform_plan(const ModelGraph& model, double target_p) {
  return allocate_sparsity(uniform_scores(model), model, target_p, 1.0, Granularity::kLayer);
}

std::vector<std::string> validate_plan(const SparsityPlan& plan, const ModelGraph& model) {
  std::vector<std::string> violations;
  const auto prunable = model.prunable_layers();
  if (plan.layers.size() != prunable.size()) {
    violations.push_back("layer-count mismatch: plan has " + std::to_string(plan.layers.size()) +
                         " layers, model has " + std::to_string(prunable.size()) + " prunable");
  }
  if (plan.total_params != model.prunable_parameter_count()) {
    violations.push_back("total-size mismatch");
  }
  if (plan.n_select != keep_budget(plan.target_p, plan.total_params)) {
    violations.push_back("budget mismatch: n_select " + std::to_string(plan.n_select) +
                         " != round((1 - p) * total)");
  }
  std::size_t kept = 0;
  for (std::size_t k = 0; k < plan.layers.size(); ++k) {
    const auto& a = plan.layers[k];
    kept += a.keep;
    const auto idx = model.find_layer(a.name);
    if (!idx || model.layer(*idx).frozen) {
      violations.push_back("unknown layer: " + a.name);
      continue;
    }
    if (k < prunable.size() && prunable[k] != *idx) violations.push_back("order mismatch: " + a.name);
    if (a.size != model.layer(*idx).numel()) violations.push_back("size mismatch: " + a.name);
    if (a.keep > a.size) violations.push_back("keep exceeds size: " + a.name);
    if (!(a.sparsity >= 0.0 && a.sparsity <= 1.0)) violations.push_back("sparsity out of range: " + a.name);
    if (a.sparsity > plan.p_max + 1e-12) violations.push_back("cap exceeded: " + a.name);
    const auto expected =
        static_cast<long long>(a.size) - std::llround(a.sparsity * static_cast<double>(a.size));
    if (expected != static_cast<long long>(a.keep)) violations.push_back("inconsistent keep: " + a.name);
  }
  if (kept != plan.n_select) {
    violations.push_back("keep-total mismatch: " + std::to_string(kept) + " kept vs budget " +
                         std::to_string(plan.n_select));
  }
  return violations;
}

}  // namespace cfprune
