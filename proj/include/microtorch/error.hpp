#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace microtorch {

enum class ErrorCode {
  ShapeMismatch,
  UnsupportedDType,
  DTypeMismatch,
  BroadcastError,
  DivisionByZero,
  AxisOutOfRange,
  EmptyReduction,
  InvalidProbability,
  NonContiguousReshape,
  NonContiguous,
  SliceOutOfRange,
  InplaceOnLeafRequiringGrad,
  InplaceOnViewRequiringGrad,
  BufferTooSmall,
  MissingUpstreamForNonScalar,
  VersionMismatch,
  DoubleBackwardWithoutRetain,
  ArityMismatch,
  NonScalarOutput,
  RequiresGradDType,
  NoGradient,
  OutOfMemory,
  DoubleFree,
  ShutdownError,
  BusyExecutor,
  DeviceError,
  MissingGradient,
  CollateError,
  WorkerCrashed,
  UnknownOp,
  InvalidArgument,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the runtime carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

#define MT_CHECK(cond, code, msg)             \
  do {                                        \
    if (!(cond)) ::microtorch::fail(code, msg); \
  } while (0)

}  // namespace microtorch
