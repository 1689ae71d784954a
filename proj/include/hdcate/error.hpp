#pragma once

#include <stdexcept>
#include <string>

namespace hdcate {

// Usage or configuration problem (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a precondition (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical routine could not produce a usable result (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A treatment arm is missing or too small inside a fold's training set.
class ArmError : public DataError {
 public:
  ArmError(const std::string& what, int fold) : DataError(what), fold_(fold) {}
  int fold() const noexcept { return fold_; }

 private:
  int fold_;
};

}  // namespace hdcate
