#pragma once

#include <stdexcept>
#include <string>

namespace mueller {

/// Bad user input: config files, checkpoints, parameter ranges.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Structurally valid input carrying unusable data (negative density, ...).
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Resource limits: particle number over band capacity, kernel grid cap.
class CapacityError : public std::runtime_error {
public:
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Iteration budget exhausted; the best iterate is still available.
class ConvergenceError : public std::runtime_error {
public:
  explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical breakdown inside an otherwise valid computation.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mueller
