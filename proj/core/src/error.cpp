#include "qmc/error.hpp"

namespace qmc {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_parameter: return "invalid_parameter";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::truncation: return "truncation";
    case ErrorCode::config: return "config";
    case ErrorCode::format: return "format";
    case ErrorCode::io: return "io";
    case ErrorCode::no_signal: return "no_signal";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::degenerate_image: return "degenerate_image";
    case ErrorCode::undefined_cnr: return "undefined_cnr";
    case ErrorCode::fit_failed: return "fit_failed";
    case ErrorCode::placement_infeasible: return "placement_infeasible";
  }
  return "unknown";
}

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::config: return 3;
    case ErrorCode::invalid_parameter: return 4;
    case ErrorCode::shape_mismatch: return 5;
    case ErrorCode::truncation: return 6;
    case ErrorCode::format: return 7;
    case ErrorCode::io: return 8;
    case ErrorCode::no_signal: return 9;
    case ErrorCode::insufficient_data: return 10;
    case ErrorCode::degenerate_image: return 11;
    case ErrorCode::undefined_cnr: return 12;
    case ErrorCode::fit_failed: return 13;
    case ErrorCode::placement_infeasible: return 14;
  }
  return 1;
}

}  // namespace qmc
