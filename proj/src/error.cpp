#include "gav/error.hpp"

namespace gav {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::range: return "range";
    case ErrorKind::argument: return "argument";
    case ErrorKind::config: return "config";
    case ErrorKind::calibration: return "calibration";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::overflow: return "overflow";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::infeasible: return 3;
    case ErrorKind::overflow: return 4;
    default: return 2;
  }
}

}  // namespace gav
