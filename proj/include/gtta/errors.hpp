#pragma once

#include <stdexcept>
#include <string>

namespace gtta {

/// Invalid argument values or mismatched shapes.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inconsistent method / sub-config combinations, bad config files.
class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Divergence or non-finite values during optimization.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteGradientError : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

class EmptyMemoryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateStatisticsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gtta
