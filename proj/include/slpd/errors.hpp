#pragma once

#include <stdexcept>
#include <string>

namespace slpd {

// Error taxonomy shared by the library and the CLI.
// The CLI maps these to exit codes: UsageError -> 1, DataError -> 2,
// NumericError -> 3.

/// Bad arguments or flag combinations.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (files, manifests, invariants).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Failure detected during numeric computation (zero norms, non-finite
/// values, violated monotonicity checks).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace slpd
