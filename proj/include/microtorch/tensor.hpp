#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "microtorch/dtype.hpp"
#include "microtorch/storage.hpp"

namespace microtorch {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
Shape contiguous_strides(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace autograd {
class Node;
}

struct TensorImpl {
  Storage storage;
  std::int64_t offset = 0;  // in elements
  Shape shape;
  Shape strides;  // in elements
  DType dtype = DType::F32;

  bool requires_grad = false;
  bool is_view = false;
  std::shared_ptr<autograd::Node> grad_fn;
  std::uint32_t output_nr = 0;
  std::weak_ptr<autograd::Node> grad_accumulator;

  std::mutex grad_mutex;
  std::shared_ptr<TensorImpl> grad;
};

// Reference-semantics handle: copies share the same tensor (and its autograd
// identity). Views are distinct tensors sharing one Storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  bool defined() const { return impl_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Shape& shape() const { return impl_->shape; }
  const Shape& strides() const { return impl_->strides; }
  std::int64_t offset() const { return impl_->offset; }
  DType dtype() const { return impl_->dtype; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::int64_t size(int dim) const;
  std::int64_t numel() const { return microtorch::numel(impl_->shape); }
  bool is_contiguous() const;

  const Storage& storage() const { return impl_->storage; }
  long storage_use_count() const { return impl_->storage.use_count(); }
  std::uint64_t version() const { return impl_->storage->version(); }
  bool shares_storage_with(const Tensor& other) const {
    return impl_->storage == other.impl_->storage;
  }

  // Address of element [0, ..., 0]. Only meaningful on the host after the
  // executor has been synchronized.
  std::byte* raw_data() const {
    return impl_->storage->data() + impl_->offset * static_cast<std::int64_t>(size_bytes(dtype()));
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  const std::shared_ptr<autograd::Node>& grad_fn() const { return impl_->grad_fn; }
  std::uint32_t output_nr() const { return impl_->output_nr; }

  // Accumulated gradient of a leaf (undefined when absent).
  Tensor grad() const;
  void set_grad(const Tensor& grad);
  // Drops the gradient, releasing its storage immediately.
  void clear_grad();

  // In-place ops. Each bumps the storage version by one.
  Tensor& add_(const Tensor& other, double alpha = 1.0);
  Tensor& add_(double value);
  Tensor& sub_(const Tensor& other) { return add_(other, -1.0); }
  Tensor& mul_(const Tensor& other);
  Tensor& mul_(double value);
  Tensor& zero_();
  Tensor& fill_(double value);
  Tensor& copy_(const Tensor& src);

  // Blocking: waits for queued kernels, then reads row-major values.
  std::vector<double> to_vector() const;
  double item() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace microtorch
