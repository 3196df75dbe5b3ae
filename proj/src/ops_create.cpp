#include <cstring>

#include "kernel_utils.hpp"
#include "microtorch/autograd.hpp"
#include "microtorch/ops.hpp"
#include "microtorch/random.hpp"

namespace microtorch {

using detail::View;

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    MT_CHECK(d >= 0, ErrorCode::ShapeMismatch, "negative dimension in " + shape_str(shape));
  }
}

// dst[i] = convert(src[i]) over dst's shape; src strides may broadcast.
template <typename Src, typename Dst>
void copy_strided(const View& src, const Shape& src_strides, const View& dst) {
  const Src* s = src.ptr<Src>();
  Dst* d = dst.ptr<Dst>();
  detail::for_each_offset<2>(dst.shape, {&src_strides, &dst.strides}, [&](const auto& o) {
    d[o[1]] = static_cast<Dst>(s[o[0]]);
  });
}

void enqueue_copy(std::string_view label, const Tensor& src, const Shape& src_strides,
                  const Tensor& dst) {
  View sv = detail::view_of(src);
  View dv = detail::view_of(dst);
  const DType st = src.dtype();
  const DType dt = dst.dtype();
  detail::launch(label, {src, dst}, [sv, dv, src_strides, st, dt] {
    visit_dtype(st, [&]<typename S>() {
      visit_dtype(dt, [&]<typename D>() { copy_strided<S, D>(sv, src_strides, dv); });
    });
  });
}

}  // namespace

Tensor empty(const Shape& shape, DType dtype) {
  check_shape(shape);
  const auto bytes = static_cast<std::size_t>(numel(shape)) * size_bytes(dtype);
  return detail::make_tensor(StorageImpl::allocate(bytes, current_stream()), 0, shape,
                             contiguous_strides(shape), dtype, false);
}

Tensor create(std::span<const double> data, const Shape& shape, DType dtype) {
  check_shape(shape);
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    fail(ErrorCode::ShapeMismatch, std::to_string(data.size()) + " values do not fill shape " +
                                       shape_str(shape));
  }
  Tensor out = empty(shape, dtype);
  View ov = detail::view_of(out);
  detail::launch("create", {out}, [ov, dtype, values = std::vector<double>(data.begin(), data.end())] {
    visit_dtype(dtype, [&]<typename T>() {
      T* p = ov.ptr<T>();
      for (std::size_t i = 0; i < values.size(); ++i) p[i] = static_cast<T>(values[i]);
    });
  });
  return out;
}

Tensor create(std::initializer_list<double> data, const Shape& shape, DType dtype) {
  return create(std::span<const double>(data.begin(), data.size()), shape, dtype);
}

Tensor scalar(double value, DType dtype) { return full({}, value, dtype); }

Tensor full(const Shape& shape, double value, DType dtype) {
  Tensor out = empty(shape, dtype);
  View ov = detail::view_of(out);
  const std::int64_t n = out.numel();
  detail::launch("fill", {out}, [ov, n, value, dtype] {
    visit_dtype(dtype, [&]<typename T>() {
      T* p = ov.ptr<T>();
      const T v = static_cast<T>(value);
      for (std::int64_t i = 0; i < n; ++i) p[i] = v;
    });
  });
  return out;
}

Tensor zeros(const Shape& shape, DType dtype) { return full(shape, 0.0, dtype); }
Tensor ones(const Shape& shape, DType dtype) { return full(shape, 1.0, dtype); }
Tensor zeros_like(const Tensor& t) { return zeros(t.shape(), t.dtype()); }
Tensor ones_like(const Tensor& t) { return ones(t.shape(), t.dtype()); }

Tensor arange(std::int64_t n, DType dtype) {
  Tensor out = empty({n}, dtype);
  View ov = detail::view_of(out);
  detail::launch("arange", {out}, [ov, n, dtype] {
    visit_numeric(dtype, "arange", [&]<typename T>() {
      T* p = ov.ptr<T>();
      for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(i);
    });
  });
  return out;
}

Tensor randn(const Shape& shape, std::uint64_t seed, DType dtype) {
  Tensor out = empty(shape, dtype);
  View ov = detail::view_of(out);
  const std::int64_t n = out.numel();
  detail::launch("randn", {out}, [ov, n, seed, dtype] {
    visit_floating(dtype, "randn", [&]<typename T>() {
      Xoshiro256 gen(seed);
      T* p = ov.ptr<T>();
      for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(gen.normal());
    });
  });
  return out;
}

Tensor rand(const Shape& shape, std::uint64_t seed, DType dtype) {
  Tensor out = empty(shape, dtype);
  View ov = detail::view_of(out);
  const std::int64_t n = out.numel();
  detail::launch("rand", {out}, [ov, n, seed, dtype] {
    visit_floating(dtype, "rand", [&]<typename T>() {
      Xoshiro256 gen(seed);
      T* p = ov.ptr<T>();
      for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(gen.uniform());
    });
  });
  return out;
}

Tensor clone(const Tensor& a) {
  Tensor out = empty(a.shape(), a.dtype());
  enqueue_copy("clone", a, a.strides(), out);
  autograd::record("clone", {a}, {out}, {},
                   [](const std::vector<Tensor>&, const autograd::GradList& g, const autograd::NeedsGrad&) {
                     return autograd::GradList{g[0]};
                   });
  return out;
}

Tensor contiguous(const Tensor& a) { return a.is_contiguous() ? a : clone(a); }

Tensor to_dtype(const Tensor& a, DType dtype) {
  Tensor out = empty(a.shape(), dtype);
  enqueue_copy("to_dtype", a, a.strides(), out);
  return out;
}

Tensor stack(const std::vector<Tensor>& tensors) {
  MT_CHECK(!tensors.empty(), ErrorCode::ShapeMismatch, "stack of zero tensors");
  const Tensor& first = tensors.front();
  Shape shape = first.shape();
  for (const Tensor& t : tensors) {
    MT_CHECK(t.shape() == first.shape(), ErrorCode::ShapeMismatch,
             "stack: shape " + shape_str(t.shape()) + " differs from " + shape_str(first.shape()));
    MT_CHECK(t.dtype() == first.dtype(), ErrorCode::DTypeMismatch, "stack: mixed dtypes");
  }
  shape.insert(shape.begin(), static_cast<std::int64_t>(tensors.size()));
  Tensor out = empty(shape, first.dtype());
  const std::int64_t per = first.numel();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Tensor dst = detail::make_alias(out, static_cast<std::int64_t>(i) * per, first.shape(),
                                    contiguous_strides(first.shape()));
    enqueue_copy("stack", tensors[i], tensors[i].strides(), dst);
  }
  return out;
}

std::vector<double> to_host(const Tensor& t) {
  MT_CHECK(t.defined(), ErrorCode::InvalidArgument, "to_host of an undefined tensor");
  Executor::global().synchronize();
  std::vector<double> values(static_cast<std::size_t>(t.numel()));
  const View v = detail::view_of(t);
  const Shape dense = contiguous_strides(t.shape());
  visit_dtype(t.dtype(), [&]<typename T>() {
    const T* p = v.ptr<T>();
    detail::for_each_offset<2>(t.shape(), {&v.strides, &dense}, [&](const auto& o) {
      values[static_cast<std::size_t>(o[1])] = static_cast<double>(p[o[0]]);
    });
  });
  return values;
}

Tensor from_external(ExternalBuffer buffer, const Shape& shape, DType dtype) {
  check_shape(shape);
  const auto needed = static_cast<std::size_t>(numel(shape)) * size_bytes(dtype);
  if (buffer.nbytes() < needed) {
    fail(ErrorCode::BufferTooSmall, "buffer of " + std::to_string(buffer.nbytes()) +
                                        " bytes cannot hold " + shape_str(shape) + " " +
                                        std::string(to_string(dtype)));
  }
  return detail::make_tensor(StorageImpl::wrap(std::move(buffer)), 0, shape,
                             contiguous_strides(shape), dtype, false);
}

ExternalBuffer to_external(const Tensor& t) {
  MT_CHECK(t.is_contiguous(), ErrorCode::NonContiguous, "to_external needs a contiguous tensor");
  Executor::global().synchronize();
  const auto bytes = static_cast<std::size_t>(t.numel()) * size_bytes(t.dtype());
  return ExternalBuffer(t.raw_data(), bytes, [keep = t.storage()]() mutable { keep.reset(); });
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  Executor::global().synchronize();
  bool equal = true;
  const View av = detail::view_of(a);
  const View bv = detail::view_of(b);
  visit_dtype(a.dtype(), [&]<typename T>() {
    const T* pa = av.ptr<T>();
    const T* pb = bv.ptr<T>();
    detail::for_each_offset<2>(a.shape(), {&av.strides, &bv.strides}, [&](const auto& o) {
      if (std::memcmp(pa + o[0], pb + o[1], sizeof(T)) != 0) equal = false;
    });
  });
  return equal;
}

}  // namespace microtorch
