#include <cmath>
#include <limits>

#include "kernel_utils.hpp"
#include "microtorch/autograd.hpp"
#include "microtorch/ops.hpp"

namespace microtorch {

using autograd::GradList;
using autograd::NeedsGrad;
using autograd::SavedTensor;
using detail::View;

namespace {

Shape drop_axis(const Shape& s, int axis) {
  Shape out = s;
  out.erase(out.begin() + axis);
  return out;
}

Shape keep_axis(const Shape& s, int axis) {
  Shape out = s;
  out[axis] = 1;
  return out;
}

// Calls fn(in_offset, out_offset) once per slice along `axis`; the kernel
// then walks the slice using the axis stride.
template <typename Fn>
void for_each_slice(const Shape& shape, const Shape& in_strides, const Shape& out_strides,
                    int axis, Fn&& fn) {
  const Shape outer = drop_axis(shape, axis);
  const Shape si = drop_axis(in_strides, axis);
  const Shape so = drop_axis(out_strides, axis);
  detail::for_each_offset<2>(outer, {&si, &so}, [&](const auto& o) { fn(o[0], o[1]); });
}

// Materialises `g` (shaped like the reduction output) back to `shape`.
Tensor expand_reduced(const Tensor& g, const Shape& shape, std::optional<int> axis) {
  Shape strides(shape.size(), 0);
  if (axis) {
    const Shape g_strides = g.rank() == shape.size() ? g.strides() : [&] {
      Shape s = g.strides();
      s.insert(s.begin() + *axis, 0);
      return s;
    }();
    strides = g_strides;
    strides[*axis] = 0;
  }
  Tensor out = empty(shape, g.dtype());
  const View gv = detail::view_with_strides(g, shape, strides);
  const View ov = detail::view_of(out);
  const DType dtype = g.dtype();
  detail::launch("expand", {g, out}, [gv, ov, dtype] {
    visit_numeric(dtype, "expand", [&]<typename T>() {
      const T* pg = gv.ptr<T>();
      T* po = ov.ptr<T>();
      detail::for_each_offset<2>(ov.shape, {&gv.strides, &ov.strides},
                                 [&](const auto& o) { po[o[1]] = pg[o[0]]; });
    });
  });
  return out;
}

Shape reduced_shape(const Shape& shape, std::optional<int> axis, bool keepdim) {
  if (!axis) return keepdim ? Shape(shape.size(), 1) : Shape{};
  return keepdim ? keep_axis(shape, *axis) : drop_axis(shape, *axis);
}

// Max values and first-argmax indices. For axis = none the index is the
// row-major linear index.
void max_kernel_launch(std::string_view label, const Tensor& a, std::optional<int> axis,
                       const Tensor& values, const Tensor& indices) {
  const View av = detail::view_of(a);
  const View vv = values.defined() ? detail::view_of(values) : View{};
  const View iv = detail::view_of(indices);
  const DType dtype = a.dtype();
  const bool want_values = values.defined();
  detail::launch(label, {a, values, indices}, [av, vv, iv, axis, dtype, want_values] {
    visit_numeric(dtype, "max", [&]<typename T>() {
      const T* pa = av.ptr<T>();
      T* pv = want_values ? vv.ptr<T>() : nullptr;
      std::int64_t* pi = iv.ptr<std::int64_t>();
      if (!axis) {
        T best{};
        std::int64_t best_i = -1;
        std::int64_t i = 0;
        detail::for_each_offset<1>(av.shape, {&av.strides}, [&](const auto& o) {
          if (best_i < 0 || pa[o[0]] > best) {
            best = pa[o[0]];
            best_i = i;
          }
          ++i;
        });
        if (pv) pv[0] = best;
        pi[0] = best_i;
        return;
      }
      const int ax = *axis;
      const std::int64_t n = av.shape[ax];
      const std::int64_t step = av.strides[ax];
      const Shape dense = contiguous_strides(drop_axis(av.shape, ax));
      Shape dense_full = dense;
      dense_full.insert(dense_full.begin() + ax, 0);
      for_each_slice(av.shape, av.strides, dense_full, ax, [&](std::int64_t in, std::int64_t out) {
        T best = pa[in];
        std::int64_t best_k = 0;
        for (std::int64_t k = 1; k < n; ++k) {
          const T v = pa[in + k * step];
          if (v > best) {
            best = v;
            best_k = k;
          }
        }
        if (pv) pv[out] = best;
        pi[out] = best_k;
      });
    });
  });
}

}  // namespace

Tensor sum(const Tensor& a, std::optional<int> axis_in, bool keepdim) {
  if (a.dtype() == DType::Bool) fail(ErrorCode::UnsupportedDType, "sum of bool");
  std::optional<int> axis;
  if (axis_in) axis = detail::normalize_axis(*axis_in, a.rank());
  const Shape out_shape = reduced_shape(a.shape(), axis, keepdim);
  Tensor out = empty(out_shape, a.dtype());
  const View av = detail::view_of(a);
  const View ov = detail::view_of(out);
  const DType dtype = a.dtype();
  detail::launch("sum", {a, out}, [av, ov, axis, dtype] {
    visit_numeric(dtype, "sum", [&]<typename T>() {
      const T* pa = av.ptr<T>();
      T* po = ov.ptr<T>();
      if (!axis) {
        detail::acc_t<T> acc{};
        detail::for_each_offset<1>(av.shape, {&av.strides}, [&](const auto& o) { acc += pa[o[0]]; });
        po[0] = static_cast<T>(acc);
        return;
      }
      const int ax = *axis;
      const std::int64_t n = av.shape[ax];
      const std::int64_t step = av.strides[ax];
      Shape dense = contiguous_strides(drop_axis(av.shape, ax));
      dense.insert(dense.begin() + ax, 0);
      for_each_slice(av.shape, av.strides, dense, ax, [&](std::int64_t in, std::int64_t out) {
        detail::acc_t<T> acc{};
        for (std::int64_t k = 0; k < n; ++k) acc += pa[in + k * step];
        po[out] = static_cast<T>(acc);
      });
    });
  });
  autograd::record("sum", {a}, {out}, {},
                   [shape = a.shape(), axis](const std::vector<Tensor>&, const GradList& g,
                                             const NeedsGrad&) {
                     return GradList{expand_reduced(g[0], shape, axis)};
                   });
  return out;
}

Tensor mean(const Tensor& a, std::optional<int> axis, bool keepdim) {
  if (!is_floating(a.dtype())) fail(ErrorCode::UnsupportedDType, "mean requires a floating dtype");
  const std::int64_t count =
      axis ? a.shape()[detail::normalize_axis(*axis, a.rank())] : a.numel();
  return mul(sum(a, axis, keepdim), 1.0 / static_cast<double>(count));
}

Tensor max(const Tensor& a, std::optional<int> axis_in, bool keepdim) {
  if (a.dtype() == DType::Bool) fail(ErrorCode::UnsupportedDType, "max of bool");
  std::optional<int> axis;
  if (axis_in) axis = detail::normalize_axis(*axis_in, a.rank());
  const std::int64_t extent = axis ? a.shape()[*axis] : a.numel();
  MT_CHECK(extent > 0, ErrorCode::EmptyReduction, "max over an empty extent");
  const Shape out_shape = reduced_shape(a.shape(), axis, keepdim);
  Tensor values = empty(out_shape, a.dtype());
  Tensor indices = empty(reduced_shape(a.shape(), axis, false), DType::I64);
  max_kernel_launch("max", a, axis, values, indices);
  autograd::record(
      "max", {a}, {values}, {SavedTensor(indices)},
      [shape = a.shape(), axis](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad&) {
        const Tensor& idx = s[0];
        Tensor grad_in = zeros(shape, g[0].dtype());
        const View gi = detail::view_of(grad_in);
        const View iv = detail::view_of(idx);
        // Upstream viewed with the reduced (keepdim = false) geometry.
        Shape g_strides = g[0].strides();
        if (axis && g[0].rank() == shape.size()) g_strides.erase(g_strides.begin() + *axis);
        const View gv = detail::view_with_strides(g[0], idx.shape(), g_strides);
        const DType dtype = g[0].dtype();
        detail::launch("max_backward", {grad_in, idx, g[0]}, [gi, iv, gv, axis, dtype] {
          visit_numeric(dtype, "max_backward", [&]<typename T>() {
            T* pgi = gi.ptr<T>();
            const T* pg = gv.ptr<T>();
            const std::int64_t* pi = iv.ptr<std::int64_t>();
            if (!axis) {
              pgi[pi[0]] += pg[0];
              return;
            }
            const int ax = *axis;
            const Shape in_dense = contiguous_strides(gi.shape);
            Shape in_reduced = in_dense;
            in_reduced.erase(in_reduced.begin() + ax);
            std::int64_t linear = 0;
            detail::for_each_offset<2>(iv.shape, {&in_reduced, &gv.strides}, [&](const auto& o) {
              pgi[o[0] + pi[linear] * in_dense[ax]] += pg[o[1]];
              ++linear;
            });
          });
        });
        return GradList{grad_in};
      });
  return values;
}

Tensor argmax(const Tensor& a, int axis_in) {
  const int axis = detail::normalize_axis(axis_in, a.rank());
  MT_CHECK(a.shape()[axis] > 0, ErrorCode::EmptyReduction, "argmax over an empty extent");
  Tensor indices = empty(drop_axis(a.shape(), axis), DType::I64);
  max_kernel_launch("argmax", a, axis, Tensor(), indices);
  return indices;
}

namespace {

enum class SoftmaxKind { Softmax, LogSoftmax };

Tensor softmax_forward(const Tensor& a, int axis, SoftmaxKind kind) {
  const char* name = kind == SoftmaxKind::Softmax ? "softmax" : "log_softmax";
  if (!is_floating(a.dtype())) {
    fail(ErrorCode::UnsupportedDType, std::string(name) + " requires a floating dtype");
  }
  Tensor out = empty(a.shape(), a.dtype());
  const View av = detail::view_of(a);
  const View ov = detail::view_of(out);
  const DType dtype = a.dtype();
  detail::launch(name, {a, out}, [av, ov, axis, dtype, kind] {
    visit_floating(dtype, "softmax", [&]<typename T>() {
      const T* pa = av.ptr<T>();
      T* po = ov.ptr<T>();
      const std::int64_t n = av.shape[axis];
      const std::int64_t si = av.strides[axis];
      const std::int64_t so = ov.strides[axis];
      for_each_slice(av.shape, av.strides, ov.strides, axis, [&](std::int64_t in, std::int64_t out) {
        if (n == 0) return;
        double m = -std::numeric_limits<double>::infinity();
        for (std::int64_t k = 0; k < n; ++k) m = std::max(m, static_cast<double>(pa[in + k * si]));
        double total = 0.0;
        for (std::int64_t k = 0; k < n; ++k) total += std::exp(static_cast<double>(pa[in + k * si]) - m);
        if (kind == SoftmaxKind::Softmax) {
          for (std::int64_t k = 0; k < n; ++k) {
            po[out + k * so] =
                static_cast<T>(std::exp(static_cast<double>(pa[in + k * si]) - m) / total);
          }
        } else {
          const double lse = m + std::log(total);
          for (std::int64_t k = 0; k < n; ++k) {
            po[out + k * so] = static_cast<T>(static_cast<double>(pa[in + k * si]) - lse);
          }
        }
      });
    });
  });
  return out;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis_in) {
  const int axis = detail::normalize_axis(axis_in, a.rank());
  Tensor out = softmax_forward(a, axis, SoftmaxKind::Softmax);
  autograd::record("softmax", {a}, {out}, {SavedTensor(out)},
                   [axis](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad&) {
                     const Tensor& y = s[0];
                     return GradList{mul(y, sub(g[0], sum(mul(g[0], y), axis, true)))};
                   });
  return out;
}

Tensor log_softmax(const Tensor& a, int axis_in) {
  const int axis = detail::normalize_axis(axis_in, a.rank());
  Tensor out = softmax_forward(a, axis, SoftmaxKind::LogSoftmax);
  autograd::record("log_softmax", {a}, {out}, {SavedTensor(out)},
                   [axis](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad&) {
                     const Tensor& y = s[0];
                     return GradList{sub(g[0], mul(exp(y), sum(g[0], axis, true)))};
                   });
  return out;
}

}  // namespace microtorch
