#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gav {

enum class ErrorKind {
  range,          // value not representable at the declared precision
  argument,       // malformed call: shapes, indices, empty inputs
  config,         // inconsistent configuration or missing model/file
  calibration,    // calibration input unusable
  infeasible,     // optimization problem has no feasible point
  overflow,       // numeric overflow or undefined normalization
  io,             // unreadable / malformed file
};

std::string_view to_string(ErrorKind kind) noexcept;

// Process exit code used by the command-line front end.
int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define GAV_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

GAV_DEFINE_ERROR(RangeError, range)
GAV_DEFINE_ERROR(ArgumentError, argument)
GAV_DEFINE_ERROR(ConfigError, config)
GAV_DEFINE_ERROR(CalibrationError, calibration)
GAV_DEFINE_ERROR(InfeasibleError, infeasible)
GAV_DEFINE_ERROR(OverflowError, overflow)
GAV_DEFINE_ERROR(IoError, io)

#undef GAV_DEFINE_ERROR

}  // namespace gav
