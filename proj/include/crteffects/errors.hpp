#pragma once

#include <stdexcept>
#include <string>

namespace crt {

// Bad run configuration (CLI flags, config file, estimator spec).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent trial data (CSV schema, invariant violations).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An estimator could not produce a result on otherwise valid data
// (e.g. zero event counts, nonconvergence). Replicate loops record these
// instead of aborting.
struct EstimatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace crt
