#include "microtorch/optim.hpp"

#include <cmath>

#include "microtorch/autograd.hpp"
#include "microtorch/ops.hpp"

namespace microtorch::optim {

Optimizer::Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.clear_grad();
}

void Optimizer::require_grads() const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].grad().defined()) {
      fail(ErrorCode::MissingGradient, "parameter " + std::to_string(i) + " of shape " +
                                           shape_str(params_[i].shape()) + " has no gradient");
    }
  }
}

SGD::SGD(std::vector<Tensor> params, SgdOptions options)
    : Optimizer(std::move(params)), options_(options) {}

void SGD::step() {
  require_grads();
  autograd::NoGradGuard no_grad;
  for (Tensor& p : params_) {
    Tensor g = p.grad();
    if (options_.weight_decay != 0.0) g = add(g, mul(p, options_.weight_decay));
    p.add_(g, -options_.lr);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : Optimizer(std::move(params)), options_(options) {
  for (const Tensor& p : params_) {
    m_.push_back(zeros_like(p));
    v_.push_back(zeros_like(p));
  }
}

void Adam::step() {
  require_grads();
  autograd::NoGradGuard no_grad;
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double m_scale = 1.0 / (1.0 - std::pow(b1, static_cast<double>(t_)));
  const double v_scale = 1.0 / (1.0 - std::pow(b2, static_cast<double>(t_)));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    Tensor g = p.grad();
    if (options_.weight_decay != 0.0) g = add(g, mul(p, options_.weight_decay));
    m_[i].mul_(b1).add_(g, 1.0 - b1);
    v_[i].mul_(b2).add_(mul(g, g), 1.0 - b2);
    Tensor denom = add(sqrt(mul(v_[i], v_scale)), options_.eps);
    p.add_(div(mul(m_[i], m_scale), denom), -options_.lr);
  }
}

}  // namespace microtorch::optim
