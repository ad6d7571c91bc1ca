#include "cfprune/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "cfprune/baselines.hpp"
#include "cfprune/error.hpp"
#include "cfprune/io.hpp"
#include "cfprune/scoring.hpp"
#include "cfprune/serialize.hpp"
#include "json_convert.hpp"

namespace cfprune {

namespace fs = std::filesystem;
using detail::ordered_json;

std::string_view to_string(CoarseMethod m) {
  switch (m) {
    case CoarseMethod::kZeroth:
      return "zeroth";
    case CoarseMethod::kFirst:
      return "first";
    case CoarseMethod::kMagnitude:
      return "magnitude";
    case CoarseMethod::kUniform:
      return "uniform";
    case CoarseMethod::kLocal:
      return "local";
  }
  return "zeroth";
}

CoarseMethod parse_coarse_method(std::string_view s) {
  if (s == "zeroth") return CoarseMethod::kZeroth;
  if (s == "first") return CoarseMethod::kFirst;
  if (s == "magnitude") return CoarseMethod::kMagnitude;
  if (s == "uniform") return CoarseMethod::kUniform;
  if (s == "local") return CoarseMethod::kLocal;
  throw UsageError("unknown coarse method '" + std::string(s) + "'");
}

double RunConfig::effective_max_sparsity() const {
  return max_sparsity ? *max_sparsity : std::min(1.0, sparsity + 0.1);
}

void RunConfig::validate() const {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw UsageError("--sparsity must lie in [0, 1), got " + std::to_string(sparsity));
  }
  const double p_max = effective_max_sparsity();
  if (!(p_max > sparsity && p_max <= 1.0)) {
    throw UsageError("--max-sparsity must lie in (sparsity, 1], got " + std::to_string(p_max));
  }
  if (samples == 0) throw UsageError("--samples must be positive");
  if (noises == 0) throw UsageError("--noises must be positive");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw UsageError("--epsilon must be positive and finite");
  if (norm_exponent != 1 && norm_exponent != 2) throw UsageError("--norm-exponent must be 1 or 2");
  if (lambda && !(*lambda >= 0.0 && std::isfinite(*lambda))) throw UsageError("--lambda must be nonnegative");
  if (aggregation == Aggregation::kScalar &&
      (coarse == CoarseMethod::kFirst || coarse == CoarseMethod::kMagnitude)) {
    throw UsageError("element scores need --aggregation sum or mean");
  }
  if (eval_split != "train" && eval_split != "val" && eval_split != "calibration") {
    throw UsageError("unknown eval split '" + eval_split + "'");
  }
}

RunConfig apply_config_json(RunConfig c, std::string_view json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed config file: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "model_dir") c.model_dir = v.get<std::string>();
      else if (key == "calib_path") c.calib_path = v.get<std::string>();
      else if (key == "out_dir") c.out_dir = v.get<std::string>();
      else if (key == "task") c.task = v.get<std::string>();
      else if (key == "eval_split") c.eval_split = v.get<std::string>();
      else if (key == "sparsity") c.sparsity = v.get<double>();
      else if (key == "max_sparsity") c.max_sparsity = v.is_null() ? std::nullopt : std::optional(v.get<double>());
      else if (key == "coarse") c.coarse = parse_coarse_method(v.get<std::string>());
      else if (key == "fine") c.fine = parse_fine_method(v.get<std::string>());
      else if (key == "granularity") c.granularity = parse_granularity(v.get<std::string>());
      else if (key == "samples") c.samples = v.get<std::size_t>();
      else if (key == "noises") c.noises = v.get<std::size_t>();
      else if (key == "epsilon") c.epsilon = v.get<double>();
      else if (key == "lambda") c.lambda = v.is_null() ? std::nullopt : std::optional(v.get<double>());
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "aggregation") c.aggregation = parse_aggregation(v.get<std::string>());
      else if (key == "norm_exponent") c.norm_exponent = v.get<int>();
      else if (key == "wanda_group") c.wanda_group = parse_wanda_group(v.get<std::string>());
      else throw UsageError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config file field has the wrong type: ") + e.what());
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  return c;
}

namespace {

ordered_json config_object(const RunConfig& c) {
  ordered_json j;
  j["model_dir"] = c.model_dir;
  j["calib_path"] = c.calib_path;
  j["out_dir"] = c.out_dir;
  j["task"] = c.task;
  j["eval_split"] = c.eval_split;
  j["sparsity"] = c.sparsity;
  j["max_sparsity"] = c.effective_max_sparsity();
  j["coarse"] = std::string(to_string(c.coarse));
  j["fine"] = std::string(to_string(c.fine));
  j["granularity"] = std::string(to_string(c.granularity));
  j["samples"] = c.samples;
  j["noises"] = c.noises;
  j["epsilon"] = c.epsilon;
  j["lambda"] = c.lambda ? ordered_json(*c.lambda) : ordered_json(nullptr);
  j["damping_fraction"] = SparseGptOptions{}.damping_fraction;
  j["seed"] = c.seed;
  j["aggregation"] = std::string(to_string(c.aggregation));
  j["norm_exponent"] = c.norm_exponent;
  j["wanda_group"] = std::string(to_string(c.wanda_group));
  return j;
}

FineOptions fine_options(const RunConfig& c) {
  FineOptions o;
  o.wanda.group = c.wanda_group;
  o.wanda.norm_exponent = c.norm_exponent;
  o.sparsegpt.lambda = c.lambda;
  return o;
}

fs::path require_dir(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  return path;
}

std::optional<TaskSpec> load_task(const RunConfig& c) {
  if (c.task.empty()) return std::nullopt;
  return task_from_json(io::read_text(c.task));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string config_to_json(const RunConfig& config) { return detail::dump(config_object(config)); }

CalibrationSet load_calibration_for(const RunConfig& c) {
  if (!c.calib_path.empty()) {
    const auto all = io::load_calibration(c.calib_path);
    if (all.size() < c.samples) {
      throw InputError("calibration file holds " + std::to_string(all.size()) + " samples, " +
                       std::to_string(c.samples) + " requested");
    }
    return all.subset(0, c.samples);
  }
  if (const auto task = load_task(c)) {
    return calibration_split(*task, generate_task_data(*task), c.samples, c.seed);
  }
  throw UsageError("either --calib or --task is required to obtain calibration data");
}

CoarseResult run_coarse(const ModelGraph& model, const CalibrationSet& calib, const RunConfig& c) {
  c.validate();
  CoarseResult out;
  const double p_max = c.effective_max_sparsity();
  switch (c.coarse) {
    case CoarseMethod::kZeroth: {
      ModelGraph scratch = model;
      ZoConfig zo{c.epsilon, c.noises, c.seed};
      out.scores = zo_all_scores(scratch, calib, zo, &out.zo_stats);
      out.forward_passes = out.zo_stats.forward_passes;
      break;
    }
    case CoarseMethod::kFirst:
      out.scores = aggregate_to_layers(first_order_saliency(model, calib), c.aggregation, ScoreMethod::kFirstOrder);
      out.scores.sample_count = calib.size();
      out.forward_passes = calib.size();
      break;
    case CoarseMethod::kMagnitude:
      out.scores = aggregate_to_layers(magnitude_scores(model), c.aggregation, ScoreMethod::kMagnitude);
      break;
    case CoarseMethod::kUniform:
      out.scores = uniform_scores(model);
      break;
    case CoarseMethod::kLocal:
      out.scores = local_scores(model, calib, c.fine, fine_options(c));
      out.forward_passes = calib.size();
      break;
  }
  out.scores.seed = c.seed;
  if (c.coarse == CoarseMethod::kUniform) {
    out.plan = uniform_plan(model, c.sparsity);
  } else {
    out.plan = allocate_sparsity(out.scores, model, c.sparsity, p_max, c.granularity);
  }
  return out;
}

PruneOutcome prune_model(const ModelGraph& model, const CalibrationSet& calib, const RunConfig& c) {
  auto coarse = run_coarse(model, calib, c);
  auto fine = sequential_prune(model, coarse.plan, calib, c.fine, fine_options(c));
  fine.model.round_to_storage_precision();
  return {std::move(fine.model), std::move(fine.masks), std::move(coarse), std::move(fine.errors)};
}

std::string model_digest(const ModelGraph& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  auto mix_tensor = [&](const Tensor& t) {
    for (auto d : t.shape()) {
      const auto v = static_cast<std::uint64_t>(d);
      mix(&v, sizeof v);
    }
    for (double v : t.values()) {
      const float f = static_cast<float>(v);
      mix(&f, sizeof f);
    }
  };
  for (const auto& l : model.layers()) {
    mix(l.name.data(), l.name.size());
    const unsigned char flags[3] = {static_cast<unsigned char>(l.kind), static_cast<unsigned char>(l.activation),
                                    static_cast<unsigned char>(l.frozen)};
    mix(flags, sizeof flags);
    mix_tensor(l.weight);
    if (l.bias) mix_tensor(*l.bias);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string cmd_prune(const RunConfig& config) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const fs::path out_dir = require_dir(config.out_dir, "--out");
  const ModelGraph dense = io::load_model(require_dir(config.model_dir, "--model"));
  const CalibrationSet calib = load_calibration_for(config);
  const auto task = load_task(config);
  const double t_load = seconds_since(t_start);

  auto t0 = std::chrono::steady_clock::now();
  auto coarse = run_coarse(dense, calib, config);
  const double t_coarse = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  auto fine = sequential_prune(dense, coarse.plan, calib, config.fine, fine_options(config));
  fine.model.round_to_storage_precision();
  const double t_fine = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  ordered_json eval = nullptr;
  if (task) {
    const auto data = generate_task_data(*task);
    const auto split = split_samples(*task, data, parse_split(config.eval_split), config.seed);
    EvalResult dense_r = evaluate_samples(dense, split);
    EvalResult pruned_r = evaluate_samples(fine.model, split, &fine.masks);
    pruned_r.reconstruction = fine.errors;
    eval = {{"split", config.eval_split},
            {"dense", detail::eval_to_json(dense_r)},
            {"pruned", detail::eval_to_json(pruned_r)}};
  }
  const double t_eval = seconds_since(t0);

  ordered_json report;
  report["format_version"] = io::kFormatVersion;
  report["config"] = config_object(config);
  report["fixture"] = {{"model_digest", model_digest(dense)},
                       {"task", task ? ordered_json(detail::task_to_json(*task)) : ordered_json(nullptr)}};
  report["calibration"] = {{"source", config.calib_path.empty() ? "task" : "file"}, {"samples", calib.size()}};
  report["scores"] = detail::score_map_to_json(coarse.scores);
  report["forward_passes"] = coarse.forward_passes;
  if (config.coarse == CoarseMethod::kZeroth) {
    report["zeroth_order"] = {{"peak_noise_buffers", coarse.zo_stats.peak_noise_buffers},
                              {"peak_noise_elements", coarse.zo_stats.peak_noise_elements},
                              {"largest_layer_elements", coarse.zo_stats.largest_layer_elements},
                              {"excluded_elements", coarse.zo_stats.excluded_elements}};
  } else {
    report["zeroth_order"] = nullptr;
  }
  report["plan"] = detail::plan_to_json(coarse.plan);

  std::size_t kept = 0;
  std::size_t total = 0;
  ordered_json layers = ordered_json::array();
  for (const auto& m : fine.masks.layers) {
    kept += m.kept();
    total += m.numel();
    layers.push_back({{"name", m.name}, {"size", m.numel()}, {"kept", m.kept()}, {"sparsity", m.sparsity()}});
  }
  const double global = total ? static_cast<double>(total - kept) / static_cast<double>(total) : 0.0;
  report["achieved"] = {{"kept", kept}, {"total", total}, {"global_sparsity", global}, {"layers", layers}};
  ordered_json rec = ordered_json::array();
  for (const auto& e : fine.errors) {
    rec.push_back({{"layer", e.name}, {"squared_error", e.squared_error}, {"relative_error", e.relative_error}});
  }
  report["reconstruction"] = std::move(rec);
  report["eval"] = std::move(eval);
  report["note"] = kept == total ? "zero pruning: every weight kept, model unchanged" : "";
  report["timing_file"] = "timing.json";

  t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir);
  io::save_model(fine.model, out_dir / "model");
  io::save_masks(fine.masks, out_dir / "masks");
  io::write_text(out_dir / "scores.json", detail::dump(detail::score_map_to_json(coarse.scores)));
  io::write_text(out_dir / "plan.json", detail::dump(detail::plan_to_json(coarse.plan)));
  const std::string text = detail::dump(report);
  io::write_text(out_dir / "report.json", text);
  const double t_write = seconds_since(t0);

  ordered_json timing = {{"load_seconds", t_load},   {"coarse_seconds", t_coarse}, {"fine_seconds", t_fine},
                         {"eval_seconds", t_eval},   {"write_seconds", t_write},
                         {"total_seconds", seconds_since(t_start)}};
  io::write_text(out_dir / "timing.json", detail::dump(timing));
  return text;
}

std::string cmd_score(const RunConfig& config) {
  config.validate();
  const fs::path out_dir = require_dir(config.out_dir, "--out");
  const ModelGraph model = io::load_model(require_dir(config.model_dir, "--model"));
  CalibrationSet calib;
  if (config.coarse != CoarseMethod::kMagnitude && config.coarse != CoarseMethod::kUniform) {
    calib = load_calibration_for(config);
  }
  const auto coarse = run_coarse(model, calib, config);
  auto j = detail::score_map_to_json(coarse.scores);
  j["forward_passes"] = coarse.forward_passes;
  if (config.coarse == CoarseMethod::kZeroth) {
    j["peak_noise_buffers"] = coarse.zo_stats.peak_noise_buffers;
    j["peak_noise_elements"] = coarse.zo_stats.peak_noise_elements;
  }
  const std::string text = detail::dump(j);
  fs::create_directories(out_dir);
  io::write_text(out_dir / "scores.json", text);
  return text;
}

std::string cmd_eval(const fs::path& model_dir, const fs::path& task_path, std::string_view split,
                     const std::optional<fs::path>& masks_dir, std::uint64_t seed) {
  const Split s = parse_split(split);
  const ModelGraph model = io::load_model(model_dir);
  const TaskSpec task = task_from_json(io::read_text(task_path));
  std::optional<PruneMask> masks;
  if (masks_dir) masks = io::load_masks(*masks_dir);
  const auto data = generate_task_data(task);
  const auto r = evaluate_samples(model, split_samples(task, data, s, seed), masks ? &*masks : nullptr);
  return to_json(r);
}

namespace {

struct ReportRow {
  std::string method;
  double sparsity = 0.0;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::tuple<std::string, std::size_t, std::size_t, double>> layers;
  std::size_t order = 0;
};

}  // namespace

CompareOutput cmd_compare(const std::vector<fs::path>& reports) {
  if (reports.empty()) throw UsageError("compare needs at least one report");
  std::vector<ReportRow> rows;
  std::string digest;
  ordered_json task;
  for (const auto& path : reports) {
    const auto j = detail::parse(io::read_text(path), path.string());
    if (detail::field<std::string>(j, "format_version", "report") != io::kFormatVersion) {
      throw InputError(path.string() + ": unsupported report format version");
    }
    const auto fixture = detail::field<ordered_json>(j, "fixture", "report");
    const auto d = detail::field<std::string>(fixture, "model_digest", "report");
    if (rows.empty()) {
      digest = d;
      task = fixture.at("task");
    } else if (d != digest || fixture.at("task") != task) {
      throw InputError(path.string() + ": report was produced on a different model or task fixture");
    }
    const auto cfg = detail::field<ordered_json>(j, "config", "report");
    ReportRow row;
    row.method = detail::field<std::string>(cfg, "coarse", "report") + "+" +
                 detail::field<std::string>(cfg, "fine", "report");
    row.sparsity = detail::field<double>(cfg, "sparsity", "report");
    row.order = rows.size();
    const auto achieved = detail::field<ordered_json>(j, "achieved", "report");
    if (const auto& ev = j.at("eval"); !ev.is_null()) {
      const auto pruned = detail::eval_from_json(ev.at("pruned"));
      row.metrics.emplace_back("loss", pruned.loss);
      if (pruned.accuracy) row.metrics.emplace_back("accuracy", *pruned.accuracy);
      if (pruned.perplexity) row.metrics.emplace_back("perplexity", *pruned.perplexity);
    }
    row.metrics.emplace_back("global_sparsity", detail::field<double>(achieved, "global_sparsity", "report"));
    for (const auto& l : achieved.at("layers")) {
      row.layers.emplace_back(detail::field<std::string>(l, "name", "report"),
                              detail::field<std::size_t>(l, "size", "report"),
                              detail::field<std::size_t>(l, "kept", "report"),
                              detail::field<double>(l, "sparsity", "report"));
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.method != b.method) return a.method < b.method;
    return a.sparsity < b.sparsity;
  });

  std::ostringstream curve;
  curve << "method,sparsity,metric,value\n";
  std::ostringstream layers;
  layers << "method,sparsity,layer,size,keep,layer_sparsity\n";
  for (const auto& r : rows) {
    for (const auto& [metric, value] : r.metrics) {
      curve << r.method << ',' << format_sig6(r.sparsity) << ',' << metric << ',' << format_sig6(value) << '\n';
    }
    for (const auto& [name, size, keep, s] : r.layers) {
      layers << r.method << ',' << format_sig6(r.sparsity) << ',' << name << ',' << size << ',' << keep << ','
             << format_sig6(s) << '\n';
    }
  }
  return {curve.str(), layers.str()};
}

std::string cmd_report(const RunConfig& config) {
  const ModelGraph model = io::load_model(require_dir(config.model_dir, "--model"));
  const CalibrationSet calib = load_calibration_for(config);
  auto j = detail::distribution_to_json(distribution_report(model, calib));
  j["sample_count"] = calib.size();
  const std::string text = detail::dump(j);
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    io::write_text(fs::path(config.out_dir) / "distribution.json", text);
  }
  return text;
}

std::string cmd_fixture(const TaskSpec& task, const fs::path& out_dir) {
  const auto trained = train_reference(task);
  fs::create_directories(out_dir);
  io::write_text(out_dir / "task.json", to_json(task));
  io::save_model(trained.model, out_dir / "model");
  const auto data = generate_task_data(task);
  io::save_calibration(calibration_split(task, data, task.calib_count, task.seed), out_dir / "calib.json");
  const std::string golden = to_json(evaluate_samples(trained.model, CalibrationSet{data.val}));
  io::write_text(out_dir / "golden_eval.json", golden);
  return golden;
}

std::string error_json(std::string_view kind, std::string_view message, int exit_code) {
  ordered_json j;
  j["error"] = {{"kind", kind}, {"message", message}, {"exit_code", exit_code}};
  return j.dump() + "\n";
}

}  // namespace cfprune
