#pragma once

// nlohmann conversions shared by serialize.cpp and pipeline.cpp. Not installed.

#include <nlohmann/json.hpp>
#include <string>
#include <string_view>

#include "cfprune/allocation.hpp"
#include "cfprune/eval.hpp"
#include "cfprune/score_map.hpp"

namespace cfprune::detail {

using nlohmann::ordered_json;

std::string dump(const ordered_json& j);
ordered_json parse(std::string_view text, std::string_view what);

ordered_json score_map_to_json(const ScoreMap& s);
ScoreMap score_map_from_json(const ordered_json& j);

ordered_json plan_to_json(const SparsityPlan& p);
SparsityPlan plan_from_json(const ordered_json& j);

ordered_json eval_to_json(const EvalResult& r);
EvalResult eval_from_json(const ordered_json& j);

ordered_json task_to_json(const TaskSpec& t);
TaskSpec task_from_json(const ordered_json& j);

ordered_json histogram_to_json(const Histogram& h);
ordered_json distribution_to_json(const DistributionReport& r);
ordered_json comparison_to_json(const ComparisonTable& t);

[[noreturn]] void throw_missing(const char* key, std::string_view what);
[[noreturn]] void throw_mistyped(const char* key, std::string_view what);

// Checked field access; missing or mistyped fields raise InputError naming `what`.
template <typename T>
T field(const ordered_json& j, const char* key, std::string_view what) {
  if (!j.is_object() || !j.contains(key)) {
    throw_missing(key, what);
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw_mistyped(key, what);
  }
}

}  // namespace cfprune::detail
