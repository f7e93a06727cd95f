#ifndef M2R_ERRORS_HPP
#define M2R_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace m2r {

// Common base so callers can map the library's failures onto exit codes.
struct m2r_error : std::runtime_error {
  explicit m2r_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad values or preconditions on caller-supplied data.
struct invalid_input_error : m2r_error {
  explicit invalid_input_error(const std::string& msg) : m2r_error(msg) {}
};

// Tensor / matrix extents do not line up.
struct shape_error : m2r_error {
  explicit shape_error(const std::string& msg) : m2r_error(msg) {}
};

// Least-squares geometry too degenerate to fit.
struct degenerate_geometry_error : m2r_error {
  explicit degenerate_geometry_error(const std::string& msg) : m2r_error(msg) {}
};

// Non-finite loss or gradient during optimization.
struct training_diverged_error : m2r_error {
  explicit training_diverged_error(const std::string& msg) : m2r_error(msg) {}
};

// Model queried before parameters were loaded or trained.
struct not_initialized_error : m2r_error {
  explicit not_initialized_error(const std::string& msg) : m2r_error(msg) {}
};

// File could not be read, written, or opened.
struct io_error : m2r_error {
  explicit io_error(const std::string& msg) : m2r_error(msg) {}
};

// Malformed record in a data file.
struct parse_error : m2r_error {
  explicit parse_error(const std::string& msg) : m2r_error(msg) {}
};

// File format version not understood.
struct version_error : m2r_error {
  explicit version_error(const std::string& msg) : m2r_error(msg) {}
};

// Bad crop / world configuration.
struct config_error : m2r_error {
  explicit config_error(const std::string& msg) : m2r_error(msg) {}
};

}  // namespace m2r

#endif  // M2R_ERRORS_HPP
