#pragma once

#include <stdexcept>
#include <string>

namespace fddprec {

// Dimension violations. Messages name both offending shapes.
struct shape_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numerical breakdown during a computation (NaN inputs, etc.).
struct computation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Power normalization hit a zero-norm precoder.
struct degenerate_precoder_error : computation_error {
  using computation_error::computation_error;
};

// A linear system was too ill-conditioned to solve.
struct singular_matrix_error : computation_error {
  double cond_estimate;
  singular_matrix_error(const std::string& msg, double cond)
      : computation_error(msg), cond_estimate(cond) {}
};

// Persistence failures, one type per failure class so callers can
// distinguish them.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct bad_magic_error : io_error {
  using io_error::io_error;
};
struct version_error : io_error {
  using io_error::io_error;
};
struct truncated_error : io_error {
  using io_error::io_error;
};
struct checksum_error : io_error {
  using io_error::io_error;
};
struct manifest_error : io_error {
  using io_error::io_error;
};

}  // namespace fddprec
