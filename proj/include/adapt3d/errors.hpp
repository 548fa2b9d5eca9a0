#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace adapt3d {

/// Base for every error the library raises on purpose. `kind()` is the
/// machine-readable category printed by the CLI; `exit_code()` maps it to
/// the process status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept = 0;
  virtual int exit_code() const noexcept = 0;
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
  int exit_code() const noexcept override { return 2; }
};

/// Tensor shape or dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape"; }
  int exit_code() const noexcept override { return 2; }
};

/// Bad user input (unknown style token, wrong image size, ...).
class InputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "input"; }
  int exit_code() const noexcept override { return 2; }
};

/// Non-finite loss or gradient during an optimization loop.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int64_t step) : Error(what), step_(step) {}
  const char* kind() const noexcept override { return "training"; }
  int exit_code() const noexcept override { return 3; }
  int64_t step() const noexcept { return step_; }

 private:
  int64_t step_;
};

/// Corrupt, truncated or incompatible checkpoint.
class IntegrityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "integrity"; }
  int exit_code() const noexcept override { return 4; }
};

}  // namespace adapt3d
