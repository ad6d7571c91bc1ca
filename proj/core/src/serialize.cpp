#include "cfprune/serialize.hpp"

#include <cstdio>
#include <sstream>

#include "cfprune/error.hpp"
#include "cfprune/io.hpp"
#include "json_convert.hpp"

namespace cfprune {

namespace detail {

void throw_missing(const char* key, std::string_view what) {
  throw InputError(std::string(what) + ": missing field '" + key + "'");
}

void throw_mistyped(const char* key, std::string_view what) {
  throw InputError(std::string(what) + ": field '" + key + "' has the wrong type");
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

ordered_json parse(std::string_view text, std::string_view what) {
  try {
    return ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed JSON in " + std::string(what) + ": " + e.what());
  }
}

namespace {

ordered_json optional_number(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::optional<double> optional_field(const ordered_json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

ordered_json score_map_to_json(const ScoreMap& s) {
  ordered_json j;
  j["method"] = std::string(to_string(s.method));
  j["aggregation"] = std::string(to_string(s.aggregation));
  j["seed"] = s.seed;
  j["sample_count"] = s.sample_count;
  ordered_json entries = ordered_json::object();
  for (const auto& e : s.entries) entries[e.name] = e.score;
  j["entries"] = std::move(entries);
  return j;
}

ScoreMap score_map_from_json(const ordered_json& j) {
  constexpr std::string_view what = "score map";
  ScoreMap s;
  s.method = parse_score_method(field<std::string>(j, "method", what));
  s.aggregation = parse_aggregation(field<std::string>(j, "aggregation", what));
  s.seed = field<std::uint64_t>(j, "seed", what);
  s.sample_count = field<std::size_t>(j, "sample_count", what);
  const auto entries = field<ordered_json>(j, "entries", what);
  if (!entries.is_object()) throw InputError("score map: entries must be an object");
  for (const auto& [name, value] : entries.items()) {
    if (!value.is_number()) throw InputError("score map: score of '" + name + "' is not a number");
    s.entries.push_back({name, value.get<double>()});
  }
  s.validate();
  return s;
}

ordered_json plan_to_json(const SparsityPlan& p) {
  ordered_json j;
  j["target_p"] = p.target_p;
  j["p_max"] = p.p_max;
  j["granularity"] = std::string(to_string(p.granularity));
  j["total_params"] = p.total_params;
  j["n_select"] = p.n_select;
  ordered_json layers = ordered_json::array();
  for (const auto& l : p.layers) {
    layers.push_back({{"name", l.name}, {"unit", l.unit}, {"size", l.size}, {"keep", l.keep},
                      {"sparsity", l.sparsity}});
  }
  j["layers"] = std::move(layers);
  return j;
}

SparsityPlan plan_from_json(const ordered_json& j) {
  constexpr std::string_view what = "sparsity plan";
  SparsityPlan p;
  p.target_p = field<double>(j, "target_p", what);
  p.p_max = field<double>(j, "p_max", what);
  p.granularity = parse_granularity(field<std::string>(j, "granularity", what));
  p.total_params = field<std::size_t>(j, "total_params", what);
  p.n_select = field<std::size_t>(j, "n_select", what);
  for (const auto& l : field<ordered_json>(j, "layers", what)) {
    p.layers.push_back({field<std::string>(l, "name", what), field<std::string>(l, "unit", what),
                        field<std::size_t>(l, "size", what), field<std::size_t>(l, "keep", what),
                        field<double>(l, "sparsity", what)});
  }
  return p;
}

ordered_json eval_to_json(const EvalResult& r) {
  ordered_json j;
  j["loss"] = r.loss;
  j["accuracy"] = optional_number(r.accuracy);
  j["perplexity"] = optional_number(r.perplexity);
  j["global_sparsity"] = r.global_sparsity;
  j["sample_count"] = r.sample_count;
  ordered_json layers = ordered_json::object();
  for (const auto& [name, s] : r.layer_sparsity) layers[name] = s;
  j["layer_sparsity"] = std::move(layers);
  ordered_json rec = ordered_json::array();
  for (const auto& e : r.reconstruction) {
    rec.push_back({{"layer", e.name}, {"squared_error", e.squared_error}, {"relative_error", e.relative_error}});
  }
  j["reconstruction"] = std::move(rec);
  return j;
}

EvalResult eval_from_json(const ordered_json& j) {
  constexpr std::string_view what = "eval result";
  EvalResult r;
  r.loss = field<double>(j, "loss", what);
  r.accuracy = optional_field(j, "accuracy");
  r.perplexity = optional_field(j, "perplexity");
  r.global_sparsity = field<double>(j, "global_sparsity", what);
  r.sample_count = field<std::size_t>(j, "sample_count", what);
  const auto layers = field<ordered_json>(j, "layer_sparsity", what);
  for (const auto& [name, v] : layers.items()) {
    r.layer_sparsity.emplace_back(name, v.get<double>());
  }
  if (j.contains("reconstruction")) {
    for (const auto& e : j.at("reconstruction")) {
      r.reconstruction.push_back({field<std::string>(e, "layer", what), field<double>(e, "squared_error", what),
                                  field<double>(e, "relative_error", what)});
    }
  }
  return r;
}

ordered_json task_to_json(const TaskSpec& t) {
  ordered_json j;
  j["format_version"] = io::kFormatVersion;
  j["kind"] = std::string(to_string(t.kind));
  j["seed"] = t.seed;
  j["input_dim"] = t.input_dim;
  j["hidden_dim"] = t.hidden_dim;
  j["output_dim"] = t.output_dim;
  j["context"] = t.context;
  j["rows_per_sample"] = t.rows_per_sample;
  j["train_count"] = t.train_count;
  j["val_count"] = t.val_count;
  j["calib_count"] = t.calib_count;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["tower_scale"] = t.tower_scale;
  j["quality_floor"] = t.quality_floor;
  return j;
}

TaskSpec task_from_json(const ordered_json& j) {
  constexpr std::string_view what = "task spec";
  // Missing fields fall back to the defaults of the task kind.
  TaskSpec t = TaskSpec::defaults(parse_task_kind(field<std::string>(j, "kind", what)));
  auto opt = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = field<std::decay_t<decltype(dst)>>(j, key, what);
  };
  opt("seed", t.seed);
  opt("input_dim", t.input_dim);
  opt("hidden_dim", t.hidden_dim);
  opt("output_dim", t.output_dim);
  opt("context", t.context);
  opt("rows_per_sample", t.rows_per_sample);
  opt("train_count", t.train_count);
  opt("val_count", t.val_count);
  opt("calib_count", t.calib_count);
  opt("epochs", t.epochs);
  opt("batch_size", t.batch_size);
  opt("learning_rate", t.learning_rate);
  opt("tower_scale", t.tower_scale);
  opt("quality_floor", t.quality_floor);
  return t;
}

ordered_json histogram_to_json(const Histogram& h) {
  ordered_json j;
  j["bins"] = kHistogramBins;
  j["log10_low"] = kHistogramLowExp;
  j["log10_high"] = kHistogramHighExp;
  j["total"] = h.total;
  j["mean"] = h.mean;
  j["max"] = h.max;
  j["counts"] = h.counts;
  return j;
}

ordered_json distribution_to_json(const DistributionReport& r) {
  ordered_json j;
  j["format_version"] = io::kFormatVersion;
  ordered_json blocks = ordered_json::array();
  for (const auto& b : r.blocks) {
    blocks.push_back({{"block", b.block},
                      {"module", b.module},
                      {"weight_abs", histogram_to_json(b.weight)},
                      {"gradient_abs", histogram_to_json(b.gradient)}});
  }
  j["blocks"] = std::move(blocks);
  ordered_json modules = ordered_json::array();
  for (const auto& m : r.modules) {
    modules.push_back({{"module", m.module}, {"weight_mean", m.weight_mean}, {"gradient_mean", m.gradient_mean}});
  }
  j["modules"] = std::move(modules);
  ordered_json ratios = ordered_json::array();
  for (const auto& q : r.ratios) {
    ratios.push_back({{"numerator", q.numerator},
                      {"denominator", q.denominator},
                      {"weight_ratio", q.weight_ratio},
                      {"gradient_ratio", q.gradient_ratio}});
  }
  j["ratios"] = std::move(ratios);
  ordered_json local = ordered_json::array();
  for (const auto& l : r.local_scores) local.push_back({{"layer", l.layer}, {"score", histogram_to_json(l.score)}});
  j["local_scores"] = std::move(local);
  return j;
}

ordered_json comparison_to_json(const ComparisonTable& t) {
  ordered_json j;
  j["format_version"] = io::kFormatVersion;
  j["baseline"] = t.baseline;
  ordered_json rows = ordered_json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"label", r.label},
                    {"result", eval_to_json(r.result)},
                    {"loss_delta", r.loss_delta},
                    {"accuracy_delta", optional_number(r.accuracy_delta)},
                    {"perplexity_delta", optional_number(r.perplexity_delta)},
                    {"sparsity_delta", r.sparsity_delta}});
  }
  j["rows"] = std::move(rows);
  return j;
}

}  // namespace detail

std::string to_json(const ScoreMap& scores) { return detail::dump(detail::score_map_to_json(scores)); }
ScoreMap score_map_from_json(std::string_view text) {
  return detail::score_map_from_json(detail::parse(text, "score map"));
}

std::string to_json(const SparsityPlan& plan) { return detail::dump(detail::plan_to_json(plan)); }
SparsityPlan plan_from_json(std::string_view text) {
  return detail::plan_from_json(detail::parse(text, "sparsity plan"));
}

std::string to_json(const EvalResult& result) { return detail::dump(detail::eval_to_json(result)); }
EvalResult eval_result_from_json(std::string_view text) {
  return detail::eval_from_json(detail::parse(text, "eval result"));
}

std::string to_json(const TaskSpec& task) { return detail::dump(detail::task_to_json(task)); }
TaskSpec task_from_json(std::string_view text) { return detail::task_from_json(detail::parse(text, "task spec")); }

std::string to_json(const DistributionReport& report) { return detail::dump(detail::distribution_to_json(report)); }
std::string to_json(const ComparisonTable& table) { return detail::dump(detail::comparison_to_json(table)); }

std::string format_sig6(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::string to_csv(const ComparisonTable& table) {
  std::ostringstream out;
  out << "label,loss,accuracy,perplexity,global_sparsity,loss_delta,accuracy_delta,perplexity_delta,"
         "sparsity_delta\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_sig6(*v) : std::string(); };
  for (const auto& r : table.rows) {
    out << r.label << ',' << format_sig6(r.result.loss) << ',' << opt(r.result.accuracy) << ','
        << opt(r.result.perplexity) << ',' << format_sig6(r.result.global_sparsity) << ','
        << format_sig6(r.loss_delta) << ',' << opt(r.accuracy_delta) << ',' << opt(r.perplexity_delta) << ','
        << format_sig6(r.sparsity_delta) << '\n';
  }
  return out.str();
}

}  // namespace cfprune
