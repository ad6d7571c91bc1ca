#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cfprune {

enum class ScoreMethod { kMagnitude, kFirstOrder, kZerothOrder, kUniform, kLocal };
enum class Aggregation { kSum, kMean, kScalar };

std::string_view to_string(ScoreMethod m);
std::string_view to_string(Aggregation a);
ScoreMethod parse_score_method(std::string_view s);
Aggregation parse_aggregation(std::string_view s);

struct ScoreEntry {
  std::string name;
  double score = 0.0;

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

// One nonnegative importance score per layer (or per block), in model order.
struct ScoreMap {
  std::vector<ScoreEntry> entries;
  ScoreMethod method = ScoreMethod::kMagnitude;
  Aggregation aggregation = Aggregation::kSum;
  std::uint64_t seed = 0;
  std::size_t sample_count = 0;

  std::optional<double> find(std::string_view name) const;
  double total() const;
  // Throws InputError on negative or non-finite entries.
  void validate() const;

  friend bool operator==(const ScoreMap&, const ScoreMap&) = default;
};

}  // namespace cfprune
