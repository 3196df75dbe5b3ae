#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "microtorch/storage.hpp"
#include "microtorch/tensor.hpp"

namespace microtorch {

// ---- creation --------------------------------------------------------------

// Contiguous tensor from row-major host values. Values are converted to
// `dtype`; the copy into storage is queued on the current stream.
Tensor create(std::span<const double> data, const Shape& shape, DType dtype = DType::F32);
Tensor create(std::initializer_list<double> data, const Shape& shape, DType dtype = DType::F32);
Tensor scalar(double value, DType dtype = DType::F32);

// Uninitialised contiguous tensor.
Tensor empty(const Shape& shape, DType dtype = DType::F32);
Tensor zeros(const Shape& shape, DType dtype = DType::F32);
Tensor ones(const Shape& shape, DType dtype = DType::F32);
Tensor full(const Shape& shape, double value, DType dtype = DType::F32);
Tensor zeros_like(const Tensor& t);
Tensor ones_like(const Tensor& t);
Tensor arange(std::int64_t n, DType dtype = DType::I64);

// Standard normal samples: element i (row-major) is the i-th output of
// Xoshiro256(seed).normal(). Bitwise reproducible for (shape, seed).
Tensor randn(const Shape& shape, std::uint64_t seed, DType dtype = DType::F32);
// Uniform [0, 1) samples from Xoshiro256(seed).uniform().
Tensor rand(const Shape& shape, std::uint64_t seed, DType dtype = DType::F32);

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
// relu'(0) is defined as 0.
Tensor relu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(b, a); }

// Broadcast shape under right-aligned rules; throws BroadcastError.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Sums `t` down to `shape` (inverse of broadcasting).
Tensor sum_to(const Tensor& t, const Shape& shape);

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

// Cross-correlation (no kernel flip).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor(),
              Conv2dOptions options = {});

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a, std::optional<int> axis = std::nullopt, bool keepdim = false);
Tensor mean(const Tensor& a, std::optional<int> axis = std::nullopt, bool keepdim = false);
Tensor max(const Tensor& a, std::optional<int> axis = std::nullopt, bool keepdim = false);
// Index of the first maximum along `axis` (I64, not differentiable).
Tensor argmax(const Tensor& a, int axis);

Tensor softmax(const Tensor& a, int axis = -1);
Tensor log_softmax(const Tensor& a, int axis = -1);

// ---- regularisation and losses -----------------------------------------------

// Multiplier mask: 0 with probability p, else 1/(1-p). Draw i is
// Xoshiro256(seed).uniform() in row-major order; element dropped if < p.
Tensor dropout_mask(const Shape& shape, double p, std::uint64_t seed, DType dtype = DType::F32);
Tensor dropout(const Tensor& a, double p, bool training, std::uint64_t seed);

Tensor mse_loss(const Tensor& prediction, const Tensor& target);
// Mean negative log-likelihood of `labels` (I64 [N]) under log-probs [N, C].
Tensor nll_loss(const Tensor& log_probs, const Tensor& labels);
Tensor cross_entropy(const Tensor& logits, const Tensor& labels);

// ---- views -------------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor flatten(const Tensor& a, int start_dim = 1);
Tensor transpose(const Tensor& a, int d0, int d1);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t stop);

// ---- copies ------------------------------------------------------------------

Tensor contiguous(const Tensor& a);
Tensor clone(const Tensor& a);
// Element-type conversion (not differentiable).
Tensor to_dtype(const Tensor& a, DType dtype);
// Stacks equally shaped tensors along a new leading axis (not differentiable).
Tensor stack(const std::vector<Tensor>& tensors);

// ---- host and external exchange ---------------------------------------------

std::vector<double> to_host(const Tensor& t);

// Views caller memory as a tensor without copying.
Tensor from_external(ExternalBuffer buffer, const Shape& shape, DType dtype);
// Exposes a contiguous tensor's memory without copying. Pending kernels are
// drained first. The buffer keeps the storage alive until release().
ExternalBuffer to_external(const Tensor& t);

// Test helper: exact elementwise equality of two tensors' host values and
// shapes (NaN never equal).
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace microtorch
