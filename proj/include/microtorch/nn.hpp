#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "microtorch/ops.hpp"
#include "microtorch/serialize.hpp"

namespace microtorch::nn {

// Container of parameters and child modules, both kept in registration order.
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  // Depth-first, registration order, each storage reported once.
  std::vector<Tensor> parameters() const;
  // Dotted names ("fc.w"), same order as parameters().
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  void train(bool on = true);
  bool training() const { return training_; }

  // Releases every parameter's gradient.
  void zero_grad();

  NamedTensors state() const;
  void save(const std::filesystem::path& dir) const;

 protected:
  // Marks the tensor as a leaf requiring grad and takes ownership.
  Tensor register_parameter(std::string name, Tensor t);

  template <typename M>
  std::shared_ptr<M> register_module(std::string name, std::shared_ptr<M> child) {
    children_.emplace_back(std::move(name), child);
    return child;
  }

 private:
  void collect(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const;

  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
  bool training_ = true;
};

// y = x @ w + b with w of shape [in, out]; w ~ N(0, 1/in), b = 0.
class Linear : public Module {
 public:
  Linear(std::int64_t in_features, std::int64_t out_features, std::uint64_t seed,
         DType dtype = DType::F32);
  Tensor forward(const Tensor& x) const;

  const Tensor& weight() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  Tensor w_;
  Tensor b_;
};

// Weight [out, in, k, k] ~ N(0, 1/(in*k*k)), bias = 0.
class Conv2d : public Module {
 public:
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel_size,
         std::uint64_t seed, Conv2dOptions options = {}, DType dtype = DType::F32);
  Tensor forward(const Tensor& x) const;

  const Tensor& weight() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  Tensor w_;
  Tensor b_;
  Conv2dOptions options_;
};

struct BasicModelConfig {
  std::int64_t channels = 128;
  std::int64_t side = 28;
  std::int64_t classes = 10;
  std::int64_t kernel = 3;
};

// conv -> relu -> flatten -> linear -> softmax.
class FullBasicModel : public Module {
 public:
  explicit FullBasicModel(std::uint64_t seed, BasicModelConfig config = {},
                          DType dtype = DType::F32);
  // Pre-softmax scores, shape [B, classes].
  Tensor logits(const Tensor& x) const;
  // Class probabilities, shape [B, classes].
  Tensor forward(const Tensor& x) const;

  const BasicModelConfig& config() const { return config_; }

 private:
  BasicModelConfig config_;
  std::shared_ptr<Conv2d> conv_;
  std::shared_ptr<Linear> fc_;
};

// Linear layers with relu between them (none after the last).
class Mlp : public Module {
 public:
  Mlp(const std::vector<std::int64_t>& sizes, std::uint64_t seed, DType dtype = DType::F32);
  Tensor forward(const Tensor& x) const;

 private:
  std::vector<std::shared_ptr<Linear>> layers_;
};

}  // namespace microtorch::nn
