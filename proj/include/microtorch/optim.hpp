#pragma once

#include <cstdint>
#include <vector>

#include "microtorch/tensor.hpp"

namespace microtorch::optim {

class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor> params);
  virtual ~Optimizer() = default;

  // Updates every parameter in place under no-grad. Throws MissingGradient if
  // any parameter has no .grad.
  virtual void step() = 0;
  // Releases (does not zero-fill) every parameter's gradient.
  void zero_grad();

  const std::vector<Tensor>& params() const { return params_; }

 protected:
  void require_grads() const;

  std::vector<Tensor> params_;
};

struct SgdOptions {
  double lr = 0.01;
  double weight_decay = 0.0;
};

// p -= lr * (g + weight_decay * p)
class SGD : public Optimizer {
 public:
  SGD(std::vector<Tensor> params, SgdOptions options = {});
  void step() override;
  const SgdOptions& options() const { return options_; }

 private:
  SgdOptions options_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});
  void step() override;

  std::int64_t step_count() const { return t_; }
  const std::vector<Tensor>& exp_avg() const { return m_; }
  const std::vector<Tensor>& exp_avg_sq() const { return v_; }

 private:
  AdamOptions options_;
  std::int64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace microtorch::optim
