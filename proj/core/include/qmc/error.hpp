#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qmc {

enum class ErrorCode {
  invalid_parameter,
  shape_mismatch,
  truncation,
  config,
  format,
  io,
  no_signal,
  insufficient_data,
  degenerate_image,
  undefined_cnr,
  fit_failed,
  placement_infeasible,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Process exit code the CLI uses for each error kind. Stable; listed in
/// `qmc --help`.
int exit_code(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace qmc
