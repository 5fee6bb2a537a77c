#pragma once

#include <stdexcept>

namespace rpk {

// Invalid configuration or flag combination (CLI exit code 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Pose/tree cardinality or descriptor content mismatch.
struct DescriptorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-recoverable failure during training (CLI exit code 2).
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rpk
