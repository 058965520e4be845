#pragma once

#include <stdexcept>
#include <string>

namespace lmcg {

// Exit codes used by the CLI; library code throws, the CLI maps.
enum class ExitCode : int {
  ok = 0,
  failure = 1,
  config = 2,
  data = 3,
  checkpoint = 4,
  numeric = 5,
};

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
  virtual ExitCode exit_code() const { return ExitCode::failure; }
};

/// Tensor shape or argument contract violation.
struct ShapeError : Error {
  using Error::Error;
};

/// Bad config file, unknown key, invalid flag combination.
struct ConfigError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::config; }
};

/// Dataset, manifest, or image decode problem.
struct DataError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::data; }
};

/// Checkpoint file missing, corrupt, or incompatible.
struct CheckpointError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::checkpoint; }
};

/// Non-finite value where a finite one is required.
struct NumericError : Error {
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::numeric; }
};

}  // namespace lmcg
