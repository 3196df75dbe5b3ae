#include "microtorch/nn.hpp"

#include <cmath>
#include <unordered_set>

#include "microtorch/autograd.hpp"
#include "microtorch/random.hpp"

namespace microtorch::nn {

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor>> Module::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> all;
  collect("", all);
  std::unordered_set<const StorageImpl*> seen;
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& entry : all) {
    if (seen.insert(entry.second.storage().get()).second) out.push_back(std::move(entry));
  }
  return out;
}

void Module::collect(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor>>& out) const {
  for (const auto& [name, t] : params_) out.emplace_back(prefix + name, t);
  for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

void Module::train(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->train(on);
}

void Module::zero_grad() {
  for (Tensor& p : parameters()) p.clear_grad();
}

NamedTensors Module::state() const {
  NamedTensors out;
  for (auto& [name, t] : named_parameters()) out.emplace(name, t);
  return out;
}

void Module::save(const std::filesystem::path& dir) const { save_checkpoint(dir, state()); }

Tensor Module::register_parameter(std::string name, Tensor t) {
  t.set_requires_grad(true);
  params_.emplace_back(std::move(name), t);
  return t;
}

namespace {

Tensor scaled_normal(const Shape& shape, double fan_in, std::uint64_t seed, DType dtype) {
  autograd::NoGradGuard no_grad;
  return mul(randn(shape, seed, dtype), 1.0 / std::sqrt(fan_in));
}

}  // namespace

Linear::Linear(std::int64_t in_features, std::int64_t out_features, std::uint64_t seed, DType dtype) {
  MT_CHECK(in_features > 0 && out_features > 0, ErrorCode::InvalidArgument,
           "Linear sizes must be positive");
  w_ = register_parameter("w", scaled_normal({in_features, out_features},
                                             static_cast<double>(in_features), seed, dtype));
  b_ = register_parameter("b", zeros({out_features}, dtype));
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.size(1) != w_.size(0)) {
    fail(ErrorCode::ShapeMismatch, "Linear expects [N, " + std::to_string(w_.size(0)) +
                                       "], got " + shape_str(x.shape()));
  }
  return add(matmul(x, w_), b_);
}

Conv2d::Conv2d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel_size,
               std::uint64_t seed, Conv2dOptions options, DType dtype)
    : options_(options) {
  const double fan_in = static_cast<double>(in_channels * kernel_size * kernel_size);
  w_ = register_parameter(
      "w", scaled_normal({out_channels, in_channels, kernel_size, kernel_size}, fan_in, seed, dtype));
  b_ = register_parameter("b", zeros({out_channels}, dtype));
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, w_, b_, options_); }

FullBasicModel::FullBasicModel(std::uint64_t seed, BasicModelConfig config, DType dtype)
    : config_(config) {
  const std::int64_t out_side = config.side - config.kernel + 1;
  MT_CHECK(out_side > 0, ErrorCode::InvalidArgument, "input side smaller than kernel");
  conv_ = register_module("conv", std::make_shared<Conv2d>(1, config.channels, config.kernel,
                                                           mix_seed(seed, 0), Conv2dOptions{}, dtype));
  fc_ = register_module("fc", std::make_shared<Linear>(config.channels * out_side * out_side,
                                                       config.classes, mix_seed(seed, 1), dtype));
}

Tensor FullBasicModel::logits(const Tensor& x) const {
  if (x.rank() != 4 || x.size(1) != 1 || x.size(2) != config_.side || x.size(3) != config_.side) {
    fail(ErrorCode::ShapeMismatch, "FullBasicModel expects [B, 1, " + std::to_string(config_.side) +
                                       ", " + std::to_string(config_.side) + "], got " +
                                       shape_str(x.shape()));
  }
  Tensor t1 = conv_->forward(x);
  Tensor t2 = relu(t1);
  return fc_->forward(flatten(t2));
}

Tensor FullBasicModel::forward(const Tensor& x) const { return softmax(logits(x), 1); }

Mlp::Mlp(const std::vector<std::int64_t>& sizes, std::uint64_t seed, DType dtype) {
  MT_CHECK(sizes.size() >= 2, ErrorCode::InvalidArgument, "Mlp needs at least two sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    layers_.push_back(register_module("l" + std::to_string(i),
                                      std::make_shared<Linear>(sizes[i], sizes[i + 1],
                                                               mix_seed(seed, i), dtype)));
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h);
    if (i + 1 < layers_.size()) h = relu(h);
  }
  return h;
}

}  // namespace microtorch::nn
