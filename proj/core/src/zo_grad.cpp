#include "cfprune/zo_grad.hpp"

#include <algorithm>
#include <cmath>

#include "cfprune/error.hpp"
#include "cfprune/rng.hpp"

namespace cfprune {

namespace {

// Scoped accounting for one layer-sized noise buffer.
class NoiseBuffer {
 public:
  NoiseBuffer(std::size_t n, ZoStats* stats) : data_(n), stats_(stats) {
    if (stats_) {
      ++stats_->live_noise_buffers;
      stats_->live_noise_elements += n;
      stats_->peak_noise_buffers = std::max(stats_->peak_noise_buffers, stats_->live_noise_buffers);
      stats_->peak_noise_elements = std::max(stats_->peak_noise_elements, stats_->live_noise_elements);
    }
  }
  ~NoiseBuffer() {
    if (stats_) {
      --stats_->live_noise_buffers;
      stats_->live_noise_elements -= data_.size();
    }
  }
  NoiseBuffer(const NoiseBuffer&) = delete;
  NoiseBuffer& operator=(const NoiseBuffer&) = delete;

  std::vector<double>& values() noexcept { return data_; }

 private:
  std::vector<double> data_;
  ZoStats* stats_;
};

}  // namespace

void ZoConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InputError("zeroth-order epsilon must be positive and finite, got " + std::to_string(epsilon));
  }
  if (noises_per_sample == 0) throw InputError("noises_per_sample must be at least 1");
}

PerturbationReplay::PerturbationReplay(ModelGraph& model, std::string_view layer, std::uint64_t seed,
                                       std::uint64_t noise_index, double epsilon, ZoStats* stats)
    : model_(model),
      layer_(model.layer_index(layer)),
      seed_(seed),
      noise_index_(noise_index),
      epsilon_(epsilon),
      stats_(stats) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw InputError("perturbation epsilon must be positive and finite");
  }
  if (model_.layer(layer_).frozen) {
    throw InputError("layer '" + model_.layer(layer_).name + "' is frozen and cannot be perturbed");
  }
  if (stats_) {
    stats_->largest_layer_elements =
        std::max(stats_->largest_layer_elements, model_.layer(layer_).numel());
  }
}

PerturbationReplay::~PerturbationReplay() {
  try {
    if (state_ == State::kPlus) step(PerturbDirection::kMinus);
    if (state_ == State::kMinus) step(PerturbDirection::kRestore);
  } catch (...) {
  }
}

void PerturbationReplay::regenerate(std::vector<double>& delta) const {
  const CounterNormal z(seed_, layer_, noise_index_);
  for (std::size_t j = 0; j < delta.size(); ++j) {
    // Single-precision steps keep w + d exact for weights within ~2^28 of d.
    delta[j] = static_cast<double>(static_cast<float>(epsilon_ * z.at(j)));
  }
}

void PerturbationReplay::step(PerturbDirection direction) {
  Tensor& w = model_.mutable_weight(layer_);
  NoiseBuffer buffer(w.numel(), stats_);
  auto& delta = buffer.values();
  regenerate(delta);

  auto excluded = excluded_.begin();
  auto skip = [&](std::size_t j) {
    if (excluded != excluded_.end() && *excluded == j) {
      ++excluded;
      return true;
    }
    return false;
  };

  switch (direction) {
    case PerturbDirection::kPlus: {
      if (state_ != State::kOriginal) throw std::logic_error("kPlus requires the original weights");
      excluded_.clear();
      for (std::size_t j = 0; j < delta.size(); ++j) {
        const double orig = w[j];
        const double d = delta[j];
        const double plus = orig + d;
        const double minus = plus - (d + d);
        const double back = minus + d;
        if (back != orig || !std::isfinite(plus) || !std::isfinite(minus)) {
          excluded_.push_back(j);
          continue;
        }
        w[j] = plus;
      }
      if (stats_) stats_->excluded_elements += excluded_.size();
      state_ = State::kPlus;
      break;
    }
    case PerturbDirection::kMinus: {
      if (state_ != State::kPlus) throw std::logic_error("kMinus requires a preceding kPlus");
      for (std::size_t j = 0; j < delta.size(); ++j) {
        if (!skip(j)) w[j] = w[j] - (delta[j] + delta[j]);
      }
      state_ = State::kMinus;
      break;
    }
    case PerturbDirection::kRestore: {
      if (state_ != State::kMinus) throw std::logic_error("kRestore requires a preceding kMinus");
      for (std::size_t j = 0; j < delta.size(); ++j) {
        if (!skip(j)) w[j] = w[j] + delta[j];
      }
      state_ = State::kOriginal;
      break;
    }
  }
}

double zo_layer_score(ModelGraph& model, std::string_view layer, const CalibrationSet& batch,
                      const ZoConfig& cfg, ZoStats* stats) {
  cfg.validate();
  batch.validate();
  double total = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    for (std::size_t n = 0; n < cfg.noises_per_sample; ++n) {
      PerturbationReplay replay(model, layer, cfg.seed, k * cfg.noises_per_sample + n, cfg.epsilon,
                                stats);
      double plus = 0.0;
      double minus = 0.0;
      try {
        replay.step(PerturbDirection::kPlus);
        plus = sample_loss(model, batch.samples[k]);
        replay.step(PerturbDirection::kMinus);
        minus = sample_loss(model, batch.samples[k]);
        replay.step(PerturbDirection::kRestore);
      } catch (const NumericalError& e) {
        throw NumericalError("zeroth-order scoring of layer '" + std::string(layer) + "': " + e.what());
      }
      if (stats) stats->forward_passes += 2;
      total += std::abs((plus - minus) / (2.0 * cfg.epsilon));
    }
  }
  return total / static_cast<double>(batch.size() * cfg.noises_per_sample);
}

ScoreMap zo_all_scores(ModelGraph& model, const CalibrationSet& batch, const ZoConfig& cfg,
                       ZoStats* stats) {
  ScoreMap out;
  out.method = ScoreMethod::kZerothOrder;
  out.aggregation = Aggregation::kScalar;
  out.seed = cfg.seed;
  out.sample_count = batch.size();
  for (auto i : model.prunable_layers()) {
    const auto& name = model.layer(i).name;
    out.entries.push_back({name, zo_layer_score(model, name, batch, cfg, stats)});
  }
  return out;
}

}  // namespace cfprune
