#include "microtorch/tensor.hpp"

#include <sstream>

#include "kernel_utils.hpp"
#include "microtorch/autograd.hpp"
#include "microtorch/ops.hpp"

namespace microtorch {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Shape contiguous_strides(const Shape& shape) {
  Shape strides(shape.size());
  std::int64_t step = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    strides[i] = step;
    step *= std::max<std::int64_t>(shape[i], 1);
  }
  return strides;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

std::int64_t Tensor::size(int dim) const {
  return impl_->shape[detail::normalize_axis(dim, rank())];
}

bool Tensor::is_contiguous() const {
  std::int64_t expected = 1;
  for (std::size_t i = rank(); i-- > 0;) {
    if (impl_->shape[i] == 1) continue;
    if (impl_->strides[i] != expected) return false;
    expected *= impl_->shape[i];
  }
  return true;
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (on && !is_floating(dtype())) {
    fail(ErrorCode::RequiresGradDType,
         "requires_grad needs f32 or f64, got " + std::string(to_string(dtype())));
  }
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  std::lock_guard lock(impl_->grad_mutex);
  return Tensor(impl_->grad);
}

void Tensor::set_grad(const Tensor& grad) {
  std::lock_guard lock(impl_->grad_mutex);
  impl_->grad = grad.impl_ptr();
}

void Tensor::clear_grad() {
  std::shared_ptr<TensorImpl> dropped;
  {
    std::lock_guard lock(impl_->grad_mutex);
    dropped.swap(impl_->grad);
  }
}

std::vector<double> Tensor::to_vector() const { return to_host(*this); }

double Tensor::item() const {
  MT_CHECK(numel() == 1, ErrorCode::ShapeMismatch,
           "item() needs exactly one element, shape is " + shape_str(shape()));
  return to_host(*this)[0];
}

namespace detail {

Tensor make_tensor(Storage storage, std::int64_t offset, Shape shape, Shape strides, DType dtype,
                   bool is_view) {
  auto impl = std::make_shared<TensorImpl>();
  impl->storage = std::move(storage);
  impl->offset = offset;
  impl->shape = std::move(shape);
  impl->strides = std::move(strides);
  impl->dtype = dtype;
  impl->is_view = is_view;
  return Tensor(std::move(impl));
}

Tensor make_alias(const Tensor& t, std::int64_t offset, Shape shape, Shape strides) {
  return make_tensor(t.storage(), offset, std::move(shape), std::move(strides), t.dtype(), true);
}

Shape broadcast_strides(const Tensor& t, const Shape& out_shape) {
  Shape strides(out_shape.size(), 0);
  const std::size_t shift = out_shape.size() - t.rank();
  for (std::size_t i = 0; i < t.rank(); ++i) {
    strides[i + shift] = t.shape()[i] == 1 ? 0 : t.strides()[i];
  }
  return strides;
}

int normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    fail(ErrorCode::AxisOutOfRange,
         "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return a;
}

void launch(std::string_view label, std::initializer_list<Tensor> touched, Kernel kernel) {
  const StreamId stream = current_stream();
  for (const Tensor& t : touched) {
    if (t.defined()) t.storage()->record_use(stream);
  }
  Executor::global().enqueue(stream, label, std::move(kernel));
}

}  // namespace detail

}  // namespace microtorch
