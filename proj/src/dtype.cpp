#include "microtorch/dtype.hpp"

#include <string>

namespace microtorch {

std::string_view to_string(DType dtype) {
  switch (dtype) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::I64: return "i64";
    case DType::Bool: return "bool";
  }
  return "?";
}

DType dtype_from_code(std::uint8_t code) {
  if (code > 3) fail(ErrorCode::UnsupportedDType, "dtype code " + std::to_string(code));
  return static_cast<DType>(code);
}

}  // namespace microtorch
