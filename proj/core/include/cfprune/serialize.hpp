#pragma once

#include <string>
#include <string_view>

#include "cfprune/allocation.hpp"
#include "cfprune/eval.hpp"
#include "cfprune/score_map.hpp"

namespace cfprune {

// JSON documents are 2-space indented with a trailing newline; doubles are written in
// shortest round-trip form, so equal values always give equal bytes.

// {method, aggregation, seed, sample_count, entries: {name: score}}
std::string to_json(const ScoreMap& scores);
ScoreMap score_map_from_json(std::string_view text);

std::string to_json(const SparsityPlan& plan);
SparsityPlan plan_from_json(std::string_view text);

std::string to_json(const EvalResult& result);
EvalResult eval_result_from_json(std::string_view text);

std::string to_json(const TaskSpec& task);
TaskSpec task_from_json(std::string_view text);

std::string to_json(const DistributionReport& report);
std::string to_json(const ComparisonTable& table);

// printf("%.6g")
std::string format_sig6(double value);

// label,loss,accuracy,perplexity,global_sparsity,loss_delta,accuracy_delta,perplexity_delta,sparsity_delta
std::string to_csv(const ComparisonTable& table);

}  // namespace cfprune
