#include "microtorch/error.hpp"

namespace microtorch {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnsupportedDType: return "UnsupportedDType";
    case ErrorCode::DTypeMismatch: return "DTypeMismatch";
    case ErrorCode::BroadcastError: return "BroadcastError";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
    case ErrorCode::AxisOutOfRange: return "AxisOutOfRange";
    case ErrorCode::EmptyReduction: return "EmptyReduction";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::NonContiguousReshape: return "NonContiguousReshape";
    case ErrorCode::NonContiguous: return "NonContiguous";
    case ErrorCode::SliceOutOfRange: return "SliceOutOfRange";
    case ErrorCode::InplaceOnLeafRequiringGrad: return "InplaceOnLeafRequiringGrad";
    case ErrorCode::InplaceOnViewRequiringGrad: return "InplaceOnViewRequiringGrad";
    case ErrorCode::BufferTooSmall: return "BufferTooSmall";
    case ErrorCode::MissingUpstreamForNonScalar: return "MissingUpstreamForNonScalar";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DoubleBackwardWithoutRetain: return "DoubleBackwardWithoutRetain";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::NonScalarOutput: return "NonScalarOutput";
    case ErrorCode::RequiresGradDType: return "RequiresGradDType";
    case ErrorCode::NoGradient: return "NoGradient";
    case ErrorCode::OutOfMemory: return "OutOfMemory";
    case ErrorCode::DoubleFree: return "DoubleFree";
    case ErrorCode::ShutdownError: return "ShutdownError";
    case ErrorCode::BusyExecutor: return "BusyExecutor";
    case ErrorCode::DeviceError: return "DeviceError";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::CollateError: return "CollateError";
    case ErrorCode::WorkerCrashed: return "WorkerCrashed";
    case ErrorCode::UnknownOp: return "UnknownOp";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace microtorch
