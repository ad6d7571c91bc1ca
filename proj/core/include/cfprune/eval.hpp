#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cfprune/local_prune.hpp"
#include "cfprune/mask.hpp"
#include "cfprune/model.hpp"

namespace cfprune {

enum class TaskKind { kSyntheticRegression, kSyntheticClassification, kCharLm, kTwoTowerFusion };
enum class Split { kTrain, kVal, kCalibration };

std::string_view to_string(TaskKind k);
TaskKind parse_task_kind(std::string_view s);
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct TaskSpec {
  TaskKind kind = TaskKind::kSyntheticRegression;
  std::uint64_t seed = 0;
  std::size_t input_dim = 8;
  std::size_t hidden_dim = 32;
  std::size_t output_dim = 4;      // regression targets, classes, or vocabulary
  std::size_t context = 4;         // char_lm: previous characters per prediction
  std::size_t rows_per_sample = 1;  // char_lm: predictions per sample
  std::size_t train_count = 1024;
  std::size_t val_count = 256;
  std::size_t calib_count = 32;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  // two_tower_fusion: initial weight scale of the first tower relative to the second.
  double tower_scale = 1.0;
  // Quality floor checked by train_reference (mse ceiling or accuracy floor).
  double quality_floor = 0.0;

  static TaskSpec defaults(TaskKind kind);
};

struct TaskData {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

// Train and validation splits are generated from disjoint parts of one stream.
TaskData generate_task_data(const TaskSpec& task);

// `count` distinct training samples chosen by `seed`.
CalibrationSet calibration_split(const TaskSpec& task, const TaskData& data, std::size_t count,
                                 std::uint64_t seed);

CalibrationSet split_samples(const TaskSpec& task, const TaskData& data, Split split,
                             std::uint64_t seed = 0);

// Untrained model for the task, initialized from task.seed.
ModelGraph build_model(const TaskSpec& task);

struct TrainedModel {
  ModelGraph model;
  double val_metric = 0.0;  // mse for regression, accuracy otherwise
};

// Deterministic Adam training; throws a fixture error when the quality floor is missed.
// The result is rounded to storage precision so it equals its saved form.
TrainedModel train_reference(const TaskSpec& task);

// Multiplies layer `name`'s weight and bias by `factor` > 0 and divides the next layer's
// weight by it. With a positively homogeneous activation (identity or relu) the model
// function is unchanged while the next layer's inputs grow by `factor`. Frozen layers
// are rescaled too.
void rescale_layer_output(ModelGraph& model, std::string_view name, double factor);

struct EvalResult {
  double loss = 0.0;
  std::optional<double> accuracy;
  std::optional<double> perplexity;
  std::vector<LayerReconstruction> reconstruction;
  std::vector<std::pair<std::string, double>> layer_sparsity;
  double global_sparsity = 0.0;
  std::size_t sample_count = 0;
};

// Metrics over a sample set. Sparsity comes from `masks` when given, otherwise from
// the zero count of each prunable weight.
EvalResult evaluate_samples(const ModelGraph& model, const CalibrationSet& samples,
                            const PruneMask* masks = nullptr);
EvalResult evaluate(const ModelGraph& model, const TaskSpec& task, Split split,
                    const PruneMask* masks = nullptr);

inline constexpr std::size_t kHistogramBins = 64;
inline constexpr double kHistogramLowExp = -12.0;
inline constexpr double kHistogramHighExp = 4.0;

// Log-spaced histogram over [1e-12, 1e4]; values below (including 0) fall in bin 0,
// values above in the last bin.
struct Histogram {
  std::array<std::size_t, kHistogramBins> counts{};
  std::size_t total = 0;
  double mean = 0.0;
  double max = 0.0;

  void add(double value);
  void finish();
  static double lower_edge(std::size_t bin);
};

struct BlockDistribution {
  std::string block;
  std::string module;
  Histogram weight;
  Histogram gradient;
};

struct ModuleSummary {
  std::string module;
  double weight_mean = 0.0;
  double gradient_mean = 0.0;
};

struct ModuleRatio {
  std::string numerator;
  std::string denominator;
  double weight_ratio = 0.0;
  double gradient_ratio = 0.0;
};

struct LayerScoreDistribution {
  std::string layer;
  Histogram score;  // w^2 / [H^-1]_jj
};

struct DistributionReport {
  std::vector<BlockDistribution> blocks;
  std::vector<ModuleSummary> modules;
  std::vector<ModuleRatio> ratios;
  std::vector<LayerScoreDistribution> local_scores;
};

// Module of a block: the part of its name before the first '.'.
std::string module_of(std::string_view block);

// |W| and |dL/dW| distributions per block (prunable layers only), cross-module mean
// ratios, and per-layer OBS local score distributions.
DistributionReport distribution_report(const ModelGraph& model, const CalibrationSet& batch);

struct ComparisonRow {
  std::string label;
  EvalResult result;
  double loss_delta = 0.0;
  std::optional<double> accuracy_delta;
  std::optional<double> perplexity_delta;
  double sparsity_delta = 0.0;
};

struct ComparisonTable {
  std::string baseline;
  std::vector<ComparisonRow> rows;  // sorted by label
};

// Deltas are (run - baseline). Duplicate labels or a missing baseline are errors.
ComparisonTable compare_runs(const std::vector<std::pair<std::string, EvalResult>>& results,
                             const std::string& baseline);

}  // namespace cfprune
