#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cfprune/error.hpp"
#include "cfprune/eval.hpp"
#include "cfprune/io.hpp"
#include "cfprune/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cfprune;

namespace {

// Raw flag values; only the ones given on the command line override the config file.
struct RunFlags {
  std::string config_file;
  RunConfig values;
  std::string max_sparsity;
  std::string lambda;
  std::string coarse = "zeroth";
  std::string fine = "wanda";
  std::string granularity = "block";
  std::string aggregation = "sum";
  std::string wanda_group = "per_row";
  std::vector<std::pair<std::string, CLI::Option*>> options;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  auto add = [&](const std::string& name, auto& target, const std::string& help) {
    f.options.emplace_back(name, cmd->add_option("--" + name, target, help));
  };
  cmd->add_option("--config", f.config_file, "JSON file supplying any run field");
  add("model", f.values.model_dir, "input model directory");
  add("calib", f.values.calib_path, "calibration index file");
  add("out", f.values.out_dir, "output directory");
  add("task", f.values.task, "task.json for evaluation and calibration draws");
  add("eval-split", f.values.eval_split, "train | val | calibration");
  add("sparsity", f.values.sparsity, "target global sparsity p");
  add("max-sparsity", f.max_sparsity, "per-layer cap (default p + 0.1)");
  add("coarse", f.coarse, "zeroth | first | magnitude | uniform | local");
  add("fine", f.fine, "wanda | sparsegpt | magnitude");
  add("granularity", f.granularity, "layer | block");
  add("samples", f.values.samples, "calibration samples K");
  add("noises", f.values.noises, "noises per sample");
  add("epsilon", f.values.epsilon, "perturbation scale");
  add("lambda", f.lambda, "absolute damping for the Hessian");
  add("seed", f.values.seed, "seed for noise and calibration draws");
  add("aggregation", f.aggregation, "sum | mean");
  add("norm-exponent", f.values.norm_exponent, "Wanda activation-norm exponent (1 or 2)");
  add("wanda-group", f.wanda_group, "per_row | per_layer");
}

double parse_number(const std::string& flag, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("--" + flag + " expects a number, got '" + text + "'");
}

RunConfig resolve(const RunFlags& f) {
  RunConfig c;
  if (!f.config_file.empty()) c = apply_config_json(c, io::read_text(f.config_file));
  for (const auto& [name, opt] : f.options) {
    if (opt->count() == 0) continue;
    if (name == "model") c.model_dir = f.values.model_dir;
    else if (name == "calib") c.calib_path = f.values.calib_path;
    else if (name == "out") c.out_dir = f.values.out_dir;
    else if (name == "task") c.task = f.values.task;
    else if (name == "eval-split") c.eval_split = f.values.eval_split;
    else if (name == "sparsity") c.sparsity = f.values.sparsity;
    else if (name == "max-sparsity") c.max_sparsity = parse_number(name, f.max_sparsity);
    else if (name == "coarse") c.coarse = parse_coarse_method(f.coarse);
    else if (name == "fine") c.fine = parse_fine_method(f.fine);
    else if (name == "granularity") c.granularity = parse_granularity(f.granularity);
    else if (name == "samples") c.samples = f.values.samples;
    else if (name == "noises") c.noises = f.values.noises;
    else if (name == "epsilon") c.epsilon = f.values.epsilon;
    else if (name == "lambda") c.lambda = parse_number(name, f.lambda);
    else if (name == "seed") c.seed = f.values.seed;
    else if (name == "aggregation") c.aggregation = parse_aggregation(f.aggregation);
    else if (name == "norm-exponent") c.norm_exponent = f.values.norm_exponent;
    else if (name == "wanda-group") c.wanda_group = parse_wanda_group(f.wanda_group);
  }
  return c;
}

// Name parsing errors from flags are usage errors, not data errors.
template <typename F>
auto as_usage(F&& fn) {
  try {
    return fn();
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cfprune: coarse-to-fine one-shot pruning toolkit"};
  app.require_subcommand(1);

  RunFlags prune_flags;
  auto* prune = app.add_subcommand("prune", "score, allocate, prune layer by layer, evaluate, write artifacts");
  add_run_flags(prune, prune_flags);

  RunFlags score_flags;
  auto* score = app.add_subcommand("score", "coarse step only: write per-layer scores");
  add_run_flags(score, score_flags);

  RunFlags report_flags;
  auto* report = app.add_subcommand("report", "weight, gradient and local-score distributions");
  add_run_flags(report, report_flags);

  std::string eval_model, eval_task, eval_split = "val", eval_masks, eval_out;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "evaluate a saved model on a task split");
  eval->add_option("--model", eval_model, "model directory")->required();
  eval->add_option("--task", eval_task, "task.json")->required();
  eval->add_option("--split", eval_split, "train | val | calibration");
  eval->add_option("--masks", eval_masks, "masks directory for sparsity accounting");
  eval->add_option("--seed", eval_seed, "calibration draw seed (split = calibration)");
  eval->add_option("--out", eval_out, "write the result here as well");

  std::vector<std::string> compare_reports;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "merge prune reports into curve CSVs");
  compare->add_option("reports", compare_reports, "report.json files")->required();
  compare->add_option("--out", compare_out, "directory for curve.csv and layer_sparsity.csv");

  std::string fixture_kind, fixture_out;
  std::uint64_t fixture_seed = 0;
  double fixture_tower_scale = 1.0;
  auto* fixture = app.add_subcommand("fixture", "train a reference model and write a fixture directory");
  fixture->add_option("--task", fixture_kind, "synthetic_regression | synthetic_classification | char_lm | two_tower_fusion")
      ->required();
  fixture->add_option("--seed", fixture_seed, "task seed");
  fixture->add_option("--tower-scale", fixture_tower_scale, "two_tower_fusion: first-tower init scale");
  fixture->add_option("--out", fixture_out, "fixture directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << error_json("usage", e.what(), static_cast<int>(ExitCode::kUsage));
    return static_cast<int>(ExitCode::kUsage);
  }

  try {
    if (*prune) {
      std::cout << cmd_prune(as_usage([&] { return resolve(prune_flags); }));
    } else if (*score) {
      std::cout << cmd_score(as_usage([&] { return resolve(score_flags); }));
    } else if (*report) {
      std::cout << cmd_report(as_usage([&] { return resolve(report_flags); }));
    } else if (*eval) {
      const auto text = cmd_eval(eval_model, eval_task, as_usage([&] {
                                   parse_split(eval_split);
                                   return eval_split;
                                 }),
                                 eval_masks.empty() ? std::nullopt : std::optional<fs::path>(eval_masks),
                                 eval_seed);
      if (!eval_out.empty()) io::write_text(eval_out, text);
      std::cout << text;
    } else if (*compare) {
      std::vector<fs::path> paths(compare_reports.begin(), compare_reports.end());
      const auto out = cmd_compare(paths);
      if (!compare_out.empty()) {
        fs::create_directories(compare_out);
        io::write_text(fs::path(compare_out) / "curve.csv", out.curve_csv);
        io::write_text(fs::path(compare_out) / "layer_sparsity.csv", out.layers_csv);
      }
      std::cout << out.curve_csv;
    } else if (*fixture) {
      TaskSpec task = TaskSpec::defaults(as_usage([&] { return parse_task_kind(fixture_kind); }));
      task.seed = fixture_seed;
      task.tower_scale = fixture_tower_scale;
      std::cout << cmd_fixture(task, fixture_out);
    }
  } catch (const Error& e) {
    std::cerr << error_json(e.kind(), e.what(), static_cast<int>(e.exit_code()));
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << error_json("io", e.what(), static_cast<int>(ExitCode::kData));
    return static_cast<int>(ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << error_json("internal", e.what(), static_cast<int>(ExitCode::kData));
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}
