#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string_view>
#include <type_traits>
#include <vector>

#include "microtorch/executor.hpp"
#include "microtorch/tensor.hpp"

namespace microtorch::detail {

// Geometry and address of a tensor, captured by value into kernels so the
// kernel never touches a TensorImpl.
struct View {
  std::byte* base = nullptr;  // address of element [0, ..., 0]
  Shape shape;
  Shape strides;

  template <typename T>
  T* ptr() const {
    return reinterpret_cast<T*>(base);
  }
};

inline View view_of(const Tensor& t) { return {t.raw_data(), t.shape(), t.strides()}; }

inline View view_with_strides(const Tensor& t, const Shape& shape, const Shape& strides) {
  return {t.raw_data(), shape, strides};
}

Tensor make_tensor(Storage storage, std::int64_t offset, Shape shape, Shape strides, DType dtype,
                   bool is_view);

// Alias of `t` with the given geometry (shares storage, no history).
Tensor make_alias(const Tensor& t, std::int64_t offset, Shape shape, Shape strides);

// Strides that read `t` as if broadcast to `out_shape`.
Shape broadcast_strides(const Tensor& t, const Shape& out_shape);

int normalize_axis(int axis, std::size_t rank);

// Queues `kernel` on the current stream after registering the stream as a
// user of every touched storage.
void launch(std::string_view label, std::initializer_list<Tensor> touched, Kernel kernel);

template <typename T>
using acc_t = std::conditional_t<std::is_floating_point_v<T>, double, T>;

// Visits every index of `shape` in row-major order, handing `fn` the element
// offsets of each of the N operands.
template <std::size_t N, typename Fn>
void for_each_offset(const Shape& shape, const std::array<const Shape*, N>& strides, Fn&& fn) {
  const std::size_t rank = shape.size();
  for (auto d : shape) {
    if (d == 0) return;
  }
  std::array<std::int64_t, N> off{};
  if (rank == 0) {
    fn(off);
    return;
  }
  const std::int64_t inner = shape[rank - 1];
  std::array<std::int64_t, N> inner_stride{};
  for (std::size_t n = 0; n < N; ++n) inner_stride[n] = (*strides[n])[rank - 1];
  std::vector<std::int64_t> idx(rank, 0);
  for (;;) {
    std::array<std::int64_t, N> o = off;
    for (std::int64_t i = 0; i < inner; ++i) {
      fn(o);
      for (std::size_t n = 0; n < N; ++n) o[n] += inner_stride[n];
    }
    int d = static_cast<int>(rank) - 2;
    for (; d >= 0; --d) {
      ++idx[d];
      for (std::size_t n = 0; n < N; ++n) off[n] += (*strides[n])[d];
      if (idx[d] < shape[d]) break;
      for (std::size_t n = 0; n < N; ++n) off[n] -= (*strides[n])[d] * shape[d];
      idx[d] = 0;
    }
    if (d < 0) return;
  }
}

}  // namespace microtorch::detail
