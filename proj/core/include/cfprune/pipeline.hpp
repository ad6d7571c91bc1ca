#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfprune/allocation.hpp"
#include "cfprune/eval.hpp"
#include "cfprune/local_prune.hpp"
#include "cfprune/score_map.hpp"
#include "cfprune/zo_grad.hpp"

namespace cfprune {

enum class CoarseMethod { kZeroth, kFirst, kMagnitude, kUniform, kLocal };

std::string_view to_string(CoarseMethod m);
CoarseMethod parse_coarse_method(std::string_view s);

struct RunConfig {
  std::string model_dir;
  // Calibration file; when empty, `samples` training samples of `task` are drawn with `seed`.
  std::string calib_path;
  std::string out_dir;
  // task.json used for evaluation (and calibration when calib_path is empty).
  std::string task;
  std::string eval_split = "val";
  double sparsity = 0.5;
  std::optional<double> max_sparsity;  // unset: min(1, sparsity + 0.1)
  CoarseMethod coarse = CoarseMethod::kZeroth;
  FineMethod fine = FineMethod::kWanda;
  Granularity granularity = Granularity::kBlock;
  std::size_t samples = 32;
  std::size_t noises = 1;
  double epsilon = 1e-3;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  Aggregation aggregation = Aggregation::kSum;
  int norm_exponent = 1;
  WandaGroup wanda_group = WandaGroup::kPerRow;

  double effective_max_sparsity() const;
  // Throws UsageError on out-of-range values.
  void validate() const;
};

// Overlays the fields present in a JSON object onto `base`. Unknown keys are usage errors.
RunConfig apply_config_json(RunConfig base, std::string_view json_text);
// Every effective field, defaults included, in a fixed order.
std::string config_to_json(const RunConfig& config);

struct CoarseResult {
  ScoreMap scores;
  SparsityPlan plan;
  std::size_t forward_passes = 0;
  ZoStats zo_stats;
};

// Scores plus plan for a loaded model and calibration batch.
CoarseResult run_coarse(const ModelGraph& model, const CalibrationSet& calib, const RunConfig& config);

struct PruneOutcome {
  ModelGraph model;  // rounded to storage precision
  PruneMask masks;
  CoarseResult coarse;
  std::vector<LayerReconstruction> reconstruction;
};

// Coarse scoring, allocation and the sequential fine step, all in memory.
PruneOutcome prune_model(const ModelGraph& model, const CalibrationSet& calib, const RunConfig& config);

// Calibration batch named by the config (file or task draw), K samples.
CalibrationSet load_calibration_for(const RunConfig& config);

// Writes <out_dir>/{model/, masks/, scores.json, plan.json, report.json, timing.json}.
// Everything but timing.json is a deterministic function of the config and inputs.
// Returns the report text.
std::string cmd_prune(const RunConfig& config);

// Writes <out_dir>/scores.json; returns it. The document carries forward_passes.
std::string cmd_score(const RunConfig& config);

// EvalResult JSON of a saved model on a task split, optionally with a masks directory.
std::string cmd_eval(const std::filesystem::path& model_dir, const std::filesystem::path& task_path,
                     std::string_view split, const std::optional<std::filesystem::path>& masks_dir = {},
                     std::uint64_t seed = 0);

struct CompareOutput {
  std::string curve_csv;   // method,sparsity,metric,value
  std::string layers_csv;  // method,sparsity,layer,size,keep,sparsity_i
};

// Merges prune reports into long-format curve data. Reports over different input
// models or tasks are rejected.
CompareOutput cmd_compare(const std::vector<std::filesystem::path>& reports);

// Distribution diagnostics of a model on its calibration batch, as JSON.
std::string cmd_report(const RunConfig& config);

// Trains the reference model of a task and writes a fixture directory:
// task.json, model/, calib.json (+ bins) and golden_eval.json.
std::string cmd_fixture(const TaskSpec& task, const std::filesystem::path& out_dir);

// FNV-1a over layer names, shapes, flags and stored (float32) parameter values.
std::string model_digest(const ModelGraph& model);

// {"error": {"kind", "message", "exit_code"}}
std::string error_json(std::string_view kind, std::string_view message, int exit_code);

}  // namespace cfprune
