#include "kernel_utils.hpp"
#include "microtorch/autograd.hpp"
#include "microtorch/ops.hpp"
#include "microtorch/random.hpp"

namespace microtorch {

using autograd::GradList;
using autograd::NeedsGrad;
using autograd::SavedTensor;
using detail::View;

Tensor dropout_mask(const Shape& shape, double p, std::uint64_t seed, DType dtype) {
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorCode::InvalidProbability, "dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  Tensor mask = empty(shape, dtype);
  const View mv = detail::view_of(mask);
  const std::int64_t n = mask.numel();
  detail::launch("dropout_mask", {mask}, [mv, n, p, seed, dtype] {
    visit_floating(dtype, "dropout", [&]<typename T>() {
      Xoshiro256 gen(seed);
      const T keep = static_cast<T>(1.0 / (1.0 - p));
      T* pm = mv.ptr<T>();
      for (std::int64_t i = 0; i < n; ++i) pm[i] = gen.uniform() < p ? T{0} : keep;
    });
  });
  return mask;
}

Tensor dropout(const Tensor& a, double p, bool training, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorCode::InvalidProbability, "dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (!training) return a;
  // The mask is an ordinary (non-differentiable) operand, so backward reuses
  // exactly the same mask through mul's saved tensor.
  return mul(a, dropout_mask(a.shape(), p, seed, a.dtype()));
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    fail(ErrorCode::ShapeMismatch, "mse_loss: " + shape_str(prediction.shape()) + " vs " +
                                       shape_str(target.shape()));
  }
  Tensor diff = sub(prediction, target);
  return mean(mul(diff, diff));
}

Tensor nll_loss(const Tensor& log_probs, const Tensor& labels) {
  if (log_probs.rank() != 2 || labels.rank() != 1 || labels.shape()[0] != log_probs.shape()[0]) {
    fail(ErrorCode::ShapeMismatch, "nll_loss needs log-probs [N,C] and labels [N], got " +
                                       shape_str(log_probs.shape()) + " and " + shape_str(labels.shape()));
  }
  MT_CHECK(labels.dtype() == DType::I64, ErrorCode::DTypeMismatch, "nll_loss labels must be i64");
  if (!is_floating(log_probs.dtype())) fail(ErrorCode::UnsupportedDType, "nll_loss needs floating log-probs");
  const std::int64_t n = log_probs.shape()[0];
  const std::int64_t c = log_probs.shape()[1];
  Tensor out = empty({}, log_probs.dtype());
  const View lv = detail::view_of(log_probs);
  const View yv = detail::view_of(labels);
  const View ov = detail::view_of(out);
  const DType dtype = log_probs.dtype();
  detail::launch("nll_loss", {log_probs, labels, out}, [lv, yv, ov, n, c, dtype] {
    visit_floating(dtype, "nll_loss", [&]<typename T>() {
      const T* pl = lv.ptr<T>();
      const std::int64_t* py = yv.ptr<std::int64_t>();
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t y = py[i * yv.strides[0]];
        if (y < 0 || y >= c) fail(ErrorCode::InvalidArgument, "label " + std::to_string(y) + " out of range");
        acc += static_cast<double>(pl[i * lv.strides[0] + y * lv.strides[1]]);
      }
      ov.ptr<T>()[0] = static_cast<T>(n > 0 ? -acc / static_cast<double>(n) : 0.0);
    });
  });
  autograd::record(
      "nll_loss", {log_probs, labels}, {out}, {SavedTensor(labels)},
      [n, c](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad&) {
        Tensor gi = zeros({n, c}, g[0].dtype());
        const View iv = detail::view_of(gi);
        const View yv = detail::view_of(s[0]);
        const View gv = detail::view_of(g[0]);
        const DType dtype = g[0].dtype();
        detail::launch("nll_loss_backward", {gi, s[0], g[0]}, [iv, yv, gv, n, c, dtype] {
          visit_floating(dtype, "nll_loss", [&]<typename T>() {
            T* pi = iv.ptr<T>();
            const std::int64_t* py = yv.ptr<std::int64_t>();
            const T scale = static_cast<T>(-static_cast<double>(gv.ptr<T>()[0]) / static_cast<double>(n));
            for (std::int64_t i = 0; i < n; ++i) pi[i * c + py[i * yv.strides[0]]] = scale;
          });
        });
        return GradList{gi, Tensor()};
      });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const Tensor& labels) {
  return nll_loss(log_softmax(logits, 1), labels);
}

}  // namespace microtorch
