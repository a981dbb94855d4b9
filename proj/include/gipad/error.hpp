#pragma once

#include <stdexcept>
#include <string>

namespace gipad {

// Invalid hyperparameters, shape mismatches, divisibility violations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files, missing splits, I/O failures.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Broken internal contract (context mismatch, non-finite values, bad checksum).
class InternalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A metric is undefined for the given input (empty class, zero variance).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace gipad
