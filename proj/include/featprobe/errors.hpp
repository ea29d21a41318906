#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace featprobe {

// Process exit codes, stable across releases. The CLI maps every error type
// onto one of these; library users can read them off the exception.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitIo = 3,
  kExitEstimation = 4,
  kExitTraining = 5,
};

class Error : public std::runtime_error {
 public:
  Error(std::string msg, int exit_code)
      : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

// Bad settings, bad flag combinations, infeasible dimensions.
struct ConfigError : Error {
  explicit ConfigError(std::string m) : Error(std::move(m), kExitConfig) {}
};

// Shape or dimension mismatch between operands; message carries both shapes.
struct DimensionError : ConfigError {
  using ConfigError::ConfigError;
};

// A file exists but its bytes are not what the format requires.
struct FormatError : Error {
  explicit FormatError(std::string m) : Error(std::move(m), kExitIo) {}
};

// Well-formed file with unusable content (non-finite values, too few rows).
struct DataError : Error {
  explicit DataError(std::string m) : Error(std::move(m), kExitIo) {}
};

// Filesystem-level failure: missing file, unwritable target, short write.
struct IoError : Error {
  explicit IoError(std::string m) : Error(std::move(m), kExitIo) {}
};

// Numeric breakdown inside a computation (overflow, non-finite activations).
struct NumericError : Error {
  explicit NumericError(std::string m) : Error(std::move(m), kExitTraining) {}
};

// An estimator diverged or failed its internal guards. Carries the training
// curve collected up to the point of failure so the caller can report it.
struct EstimationError : Error {
  explicit EstimationError(std::string m, std::vector<double> partial = {})
      : Error(std::move(m), kExitEstimation), curve(std::move(partial)) {}
  std::vector<double> curve;
};

// Training stopped early; the message includes the recent loss history.
struct TrainingAbort : Error {
  explicit TrainingAbort(std::string m) : Error(std::move(m), kExitTraining) {}
};

}  // namespace featprobe
