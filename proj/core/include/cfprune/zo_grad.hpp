#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "cfprune/model.hpp"
#include "cfprune/score_map.hpp"

namespace cfprune {

struct ZoConfig {
  double epsilon = 1e-3;
  std::size_t noises_per_sample = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Counters filled by the zeroth-order routines.
struct ZoStats {
  std::size_t forward_passes = 0;
  std::size_t live_noise_buffers = 0;
  std::size_t peak_noise_buffers = 0;
  std::size_t live_noise_elements = 0;
  std::size_t peak_noise_elements = 0;
  // Largest prunable layer seen; the noise peak should never exceed it.
  std::size_t largest_layer_elements = 0;
  // Elements left unperturbed because their +/- round trip would not be exact.
  std::size_t excluded_elements = 0;
};

enum class PerturbDirection { kPlus, kMinus, kRestore };

// In-place seeded perturbation of one layer: W + d, then W - d (by subtracting 2d),
// then W again (by adding d), where d = epsilon * z and z is regenerated from
// (seed, layer, noise index) at every step instead of being stored.
//
// Every element's three-step sequence is checked in floating point before the first
// step; elements whose sequence would not return bit-identically keep d = 0. Their
// indices are the only state carried between steps.
class PerturbationReplay {
 public:
  PerturbationReplay(ModelGraph& model, std::string_view layer, std::uint64_t seed,
                     std::uint64_t noise_index, double epsilon, ZoStats* stats = nullptr);
  PerturbationReplay(const PerturbationReplay&) = delete;
  PerturbationReplay& operator=(const PerturbationReplay&) = delete;
  // Restores the layer if the sequence was left unfinished.
  ~PerturbationReplay();

  // Directions must be applied in the order kPlus, kMinus, kRestore.
  void step(PerturbDirection direction);

  std::size_t layer_index() const noexcept { return layer_; }
  const std::vector<std::size_t>& excluded() const noexcept { return excluded_; }

 private:
  void regenerate(std::vector<double>& delta) const;

  enum class State { kOriginal, kPlus, kMinus };

  ModelGraph& model_;
  std::size_t layer_;
  std::uint64_t seed_;
  std::uint64_t noise_index_;
  double epsilon_;
  ZoStats* stats_;
  State state_ = State::kOriginal;
  std::vector<std::size_t> excluded_;
};

// Mean over samples and noises of |L(W_i + eps z) - L(W_i - eps z)| / (2 eps), with
// only layer i perturbed. The noise for sample k, draw n uses noise index
// k * noises_per_sample + n. The model is restored before returning.
double zo_layer_score(ModelGraph& model, std::string_view layer, const CalibrationSet& batch,
                      const ZoConfig& cfg, ZoStats* stats = nullptr);

// zo_layer_score for every prunable layer, in model order.
ScoreMap zo_all_scores(ModelGraph& model, const CalibrationSet& batch, const ZoConfig& cfg,
                       ZoStats* stats = nullptr);

}  // namespace cfprune
