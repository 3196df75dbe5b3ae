#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "microtorch/error.hpp"

namespace microtorch {

// Codes double as the on-disk dtype byte of the MTNS tensor format.
enum class DType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2, Bool = 3 };

constexpr std::size_t size_bytes(DType dtype) {
  switch (dtype) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::I64: return 8;
    case DType::Bool: return 1;
  }
  return 0;
}

constexpr bool is_floating(DType dtype) {
  return dtype == DType::F32 || dtype == DType::F64;
}

std::string_view to_string(DType dtype);
DType dtype_from_code(std::uint8_t code);

template <typename T> struct dtype_of;
template <> struct dtype_of<float> { static constexpr DType value = DType::F32; };
template <> struct dtype_of<double> { static constexpr DType value = DType::F64; };
template <> struct dtype_of<std::int64_t> { static constexpr DType value = DType::I64; };
template <> struct dtype_of<bool> { static constexpr DType value = DType::Bool; };

// Calls fn.template operator()<T>() with the element type for `dtype`.
template <typename Fn>
decltype(auto) visit_dtype(DType dtype, Fn&& fn) {
  switch (dtype) {
    case DType::F32: return fn.template operator()<float>();
    case DType::F64: return fn.template operator()<double>();
    case DType::I64: return fn.template operator()<std::int64_t>();
    case DType::Bool: return fn.template operator()<bool>();
  }
  fail(ErrorCode::UnsupportedDType, "unknown dtype");
}

// Arithmetic kernels are instantiated for F32, F64 and I64 only.
template <typename Fn>
decltype(auto) visit_numeric(DType dtype, std::string_view op, Fn&& fn) {
  switch (dtype) {
    case DType::F32: return fn.template operator()<float>();
    case DType::F64: return fn.template operator()<double>();
    case DType::I64: return fn.template operator()<std::int64_t>();
    default: break;
  }
  fail(ErrorCode::UnsupportedDType, std::string(op) + " does not support " +
                                        std::string(to_string(dtype)));
}

template <typename Fn>
decltype(auto) visit_floating(DType dtype, std::string_view op, Fn&& fn) {
  switch (dtype) {
    case DType::F32: return fn.template operator()<float>();
    case DType::F64: return fn.template operator()<double>();
    default: break;
  }
  fail(ErrorCode::UnsupportedDType, std::string(op) + " requires a floating dtype, got " +
                                        std::string(to_string(dtype)));
}

}  // namespace microtorch
