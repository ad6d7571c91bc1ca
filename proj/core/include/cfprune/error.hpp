#pragma once

#include <stdexcept>
#include <string>

namespace cfprune {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kNumerical = 3,
};

class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what, ExitCode code)
      : std::runtime_error(what), kind_(std::move(kind)), code_(code) {}

  const std::string& kind() const noexcept { return kind_; }
  ExitCode exit_code() const noexcept { return code_; }

 private:
  std::string kind_;
  ExitCode code_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error("usage", what, ExitCode::kUsage) {}
};

struct InputError : Error {
  explicit InputError(const std::string& what) : Error("input", what, ExitCode::kData) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error("dimension", what, ExitCode::kData) {}
};

struct FeasibilityError : Error {
  explicit FeasibilityError(const std::string& what) : Error("feasibility", what, ExitCode::kData) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error("numerical", what, ExitCode::kNumerical) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what, ExitCode::kData) {}
};

}  // namespace cfprune
