#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace islandsmc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument to an operation (negative probabilities, shape mismatch, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A model callback produced a non-finite value.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, std::ptrdiff_t index = -1)
      : Error(index >= 0 ? what + " (index " + std::to_string(index) + ")" : what), index_(index) {}

  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

enum class ExtinctionLevel { kIsland, kInner, kEnsemble };

inline const char* to_string(ExtinctionLevel level) {
  switch (level) {
    case ExtinctionLevel::kIsland:
      return "island";
    case ExtinctionLevel::kInner:
      return "inner";
    case ExtinctionLevel::kEnsemble:
      return "ensemble";
  }
  return "unknown";
}

/// Every weight at some level of the particle system vanished.
class ExtinctionError : public Error {
 public:
  ExtinctionError(ExtinctionLevel level, long step)
      : Error(std::string("particle system extinct at ") + to_string(level) + " level, step " +
              std::to_string(step)),
        level_(level),
        step_(step) {}

  ExtinctionLevel level() const noexcept { return level_; }
  long step() const noexcept { return step_; }

 private:
  ExtinctionLevel level_;
  long step_;
};

/// Linear algebra failure (singular innovation covariance, indefinite matrix).
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double condition_number)
      : Error(what + " (condition number " + std::to_string(condition_number) + ")"),
        condition_number_(condition_number) {}

  double condition_number() const noexcept { return condition_number_; }

 private:
  double condition_number_;
};

/// The grid oracle lost too much mass through its boundary.
class GridTooSmallError : public Error {
 public:
  using Error::Error;
};

/// Regression on degenerate data.
class RegressionError : public Error {
 public:
  using Error::Error;
};

/// Configuration failed validation; carries every violation found.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "invalid configuration:";
    for (const auto& s : v) out += "\n  - " + s;
    return out;
  }
  std::vector<std::string> violations_;
};

}  // namespace islandsmc
