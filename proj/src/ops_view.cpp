#include "kernel_utils.hpp"
#include "microtorch/autograd.hpp"
#include "microtorch/ops.hpp"

namespace microtorch {

using autograd::GradList;
using autograd::NeedsGrad;

namespace {

void record_view(std::string_view op, const Tensor& base, const Tensor& view, autograd::VjpFn vjp) {
  if (autograd::record(op, {base}, {view}, {}, std::move(vjp))) {
    base.storage()->mark_differentiable_alias();
  }
}

}  // namespace

Tensor reshape(const Tensor& a, const Shape& requested) {
  Shape shape = requested;
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      MT_CHECK(infer < 0, ErrorCode::ShapeMismatch, "reshape: more than one -1 in " + shape_str(shape));
      infer = static_cast<int>(i);
    } else {
      MT_CHECK(shape[i] >= 0, ErrorCode::ShapeMismatch, "reshape: negative dimension");
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    MT_CHECK(known != 0 && a.numel() % known == 0, ErrorCode::ShapeMismatch,
             "reshape: cannot infer dimension for " + shape_str(requested));
    shape[infer] = a.numel() / known;
  }
  if (numel(shape) != a.numel()) {
    fail(ErrorCode::ShapeMismatch,
         "reshape " + shape_str(a.shape()) + " to " + shape_str(requested) + " changes element count");
  }
  if (!a.is_contiguous()) {
    fail(ErrorCode::NonContiguousReshape,
         "reshape needs a contiguous tensor; call contiguous() first");
  }
  Tensor out = detail::make_alias(a, a.offset(), shape, contiguous_strides(shape));
  record_view("reshape", a, out,
              [in_shape = a.shape()](const std::vector<Tensor>&, const GradList& g, const NeedsGrad&) {
                return GradList{reshape(contiguous(g[0]), in_shape)};
              });
  return out;
}

Tensor flatten(const Tensor& a, int start_dim) {
  const int start = detail::normalize_axis(start_dim, a.rank());
  Shape shape(a.shape().begin(), a.shape().begin() + start);
  std::int64_t rest = 1;
  for (std::size_t i = static_cast<std::size_t>(start); i < a.rank(); ++i) rest *= a.shape()[i];
  shape.push_back(rest);
  return reshape(a, shape);
}

Tensor transpose(const Tensor& a, int d0_in, int d1_in) {
  const int d0 = detail::normalize_axis(d0_in, a.rank());
  const int d1 = detail::normalize_axis(d1_in, a.rank());
  Shape shape = a.shape();
  Shape strides = a.strides();
  std::swap(shape[d0], shape[d1]);
  std::swap(strides[d0], strides[d1]);
  Tensor out = detail::make_alias(a, a.offset(), shape, strides);
  record_view("transpose", a, out,
              [d0, d1](const std::vector<Tensor>&, const GradList& g, const NeedsGrad&) {
                return GradList{transpose(g[0], d0, d1)};
              });
  return out;
}

Tensor slice(const Tensor& a, int axis_in, std::int64_t start, std::int64_t stop) {
  const int axis = detail::normalize_axis(axis_in, a.rank());
  const std::int64_t extent = a.shape()[axis];
  if (start < 0 || stop < start || stop > extent) {
    fail(ErrorCode::SliceOutOfRange, "slice [" + std::to_string(start) + ", " +
                                         std::to_string(stop) + ") of extent " +
                                         std::to_string(extent));
  }
  Shape shape = a.shape();
  shape[axis] = stop - start;
  Tensor out = detail::make_alias(a, a.offset() + start * a.strides()[axis], shape, a.strides());
  record_view("slice", a, out,
              [in_shape = a.shape(), axis, start, stop](const std::vector<Tensor>&, const GradList& g,
                                                       const NeedsGrad&) {
                Tensor grad_in = zeros(in_shape, g[0].dtype());
                Tensor window = slice(grad_in, axis, start, stop);
                window.copy_(g[0]);
                return GradList{grad_in};
              });
  return out;
}

}  // namespace microtorch
