#include "microtorch/autograd.hpp"

#include <algorithm>
#include <mutex>
#include <queue>
#include <unordered_map>
#include <unordered_set>

#include "kernel_utils.hpp"
#include "microtorch/ops.hpp"

namespace microtorch::autograd {

namespace {

thread_local bool tl_grad_enabled = true;
std::atomic<std::uint64_t> g_next_sequence_nr{0};
std::mutex g_accumulator_mutex;

// Node wrapping a user-defined function's backward.
class CustomNode final : public Node {
 public:
  CustomNode(std::string name, std::vector<Edge> edges, std::shared_ptr<FunctionContext> ctx,
             std::function<GradList(FunctionContext&, const GradList&)> backward,
             std::vector<std::pair<Shape, DType>> output_meta)
      : Node(std::move(name), std::move(edges), static_cast<std::uint32_t>(output_meta.size())),
        ctx_(std::move(ctx)),
        backward_(std::move(backward)),
        output_meta_(std::move(output_meta)) {}

  GradList apply(GradList grads) override {
    // Outputs that received no gradient contribute zeros.
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!grads[i].defined()) grads[i] = zeros(output_meta_[i].first, output_meta_[i].second);
    }
    return backward_(*ctx_, grads);
  }

  void release() override {
    ctx_->release();
    Node::release();
  }

  std::vector<const SavedTensor*> saved_tensors() const override {
    std::vector<const SavedTensor*> out;
    for (const auto& s : ctx_->saved()) out.push_back(&s);
    return out;
  }

 private:
  std::shared_ptr<FunctionContext> ctx_;
  std::function<GradList(FunctionContext&, const GradList&)> backward_;
  std::vector<std::pair<Shape, DType>> output_meta_;
};

}  // namespace

bool grad_enabled() { return tl_grad_enabled; }
void set_grad_enabled(bool enabled) { tl_grad_enabled = enabled; }

SavedTensor::SavedTensor(const Tensor& tensor)
    : data_(detach(tensor)), expected_version_(tensor.version()) {}

Tensor SavedTensor::unpack(std::string_view op) const {
  if (!data_.defined()) return Tensor();
  const std::uint64_t now = data_.version();
  if (now != expected_version_) {
    fail(ErrorCode::VersionMismatch,
         "a tensor saved by '" + std::string(op) + "' was modified in place after it was saved " +
             "(saved at version " + std::to_string(expected_version_) + ", now at version " +
             std::to_string(now) + ")");
  }
  return data_;
}

Node::Node(std::string name, std::vector<Edge> next_edges, std::uint32_t num_outputs)
    : name_(std::move(name)),
      next_edges_(std::move(next_edges)),
      num_outputs_(num_outputs),
      sequence_nr_(g_next_sequence_nr.fetch_add(1)) {}

FunctionNode::FunctionNode(std::string name, std::vector<Edge> edges, std::vector<SavedTensor> saved,
                           VjpFn vjp, std::uint32_t num_outputs)
    : Node(std::move(name), std::move(edges), num_outputs),
      saved_(std::move(saved)),
      vjp_(std::move(vjp)) {}

GradList FunctionNode::apply(GradList grads) {
  const bool any = std::any_of(grads.begin(), grads.end(), [](const Tensor& g) { return g.defined(); });
  if (!any) return GradList(next_edges().size());
  std::vector<Tensor> unpacked;
  unpacked.reserve(saved_.size());
  for (const auto& s : saved_) unpacked.push_back(s.unpack(name()));
  NeedsGrad needs;
  needs.reserve(next_edges().size());
  for (const auto& e : next_edges()) needs.push_back(e.valid());
  return vjp_(unpacked, grads, needs);
}

void FunctionNode::release() {
  saved_.clear();
  Node::release();
}

std::vector<const SavedTensor*> FunctionNode::saved_tensors() const {
  std::vector<const SavedTensor*> out;
  for (const auto& s : saved_) {
    if (s.defined()) out.push_back(&s);
  }
  return out;
}

AccumulateGrad::AccumulateGrad(std::shared_ptr<TensorImpl> leaf)
    : Node("AccumulateGrad", {}, 1), leaf_(std::move(leaf)) {}

GradList AccumulateGrad::apply(GradList grads) {
  if (!grads.empty() && grads[0].defined()) accumulate_grad(Tensor(leaf_), grads[0]);
  return {};
}

bool any_requires_grad(std::initializer_list<Tensor> tensors) {
  for (const Tensor& t : tensors) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

bool any_requires_grad(const std::vector<Tensor>& tensors) {
  for (const Tensor& t : tensors) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

Edge gradient_edge(const Tensor& tensor) {
  if (!tensor.defined() || !tensor.requires_grad()) return {};
  if (tensor.grad_fn()) return {tensor.grad_fn(), tensor.output_nr()};
  std::lock_guard lock(g_accumulator_mutex);
  TensorImpl* impl = tensor.impl();
  auto acc = impl->grad_accumulator.lock();
  if (!acc) {
    acc = std::make_shared<AccumulateGrad>(tensor.impl_ptr());
    impl->grad_accumulator = acc;
  }
  return {std::move(acc), 0};
}

std::shared_ptr<Node> record(std::string_view op_name, const std::vector<Tensor>& inputs,
                             const std::vector<Tensor>& outputs, std::vector<SavedTensor> saved,
                             VjpFn vjp) {
  if (!grad_enabled() || !any_requires_grad(inputs)) return nullptr;
  std::vector<Edge> edges;
  edges.reserve(inputs.size());
  for (const Tensor& in : inputs) edges.push_back(gradient_edge(in));
  auto node = std::make_shared<FunctionNode>(std::string(op_name), std::move(edges), std::move(saved),
                                             std::move(vjp),
                                             static_cast<std::uint32_t>(outputs.size()));
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    TensorImpl* impl = outputs[i].impl();
    impl->grad_fn = node;
    impl->output_nr = static_cast<std::uint32_t>(i);
    impl->requires_grad = true;
  }
  return node;
}

void rebase_history(const Tensor& tensor, std::shared_ptr<Node> node) {
  TensorImpl* impl = tensor.impl();
  impl->grad_fn = std::move(node);
  impl->output_nr = 0;
  impl->requires_grad = true;
}

Tensor detach(const Tensor& tensor) {
  return detail::make_alias(tensor, tensor.offset(), tensor.shape(), tensor.strides());
}

void accumulate_grad(const Tensor& leaf, const Tensor& g) {
  if (g.shape() != leaf.shape()) {
    fail(ErrorCode::ShapeMismatch, "gradient of shape " + shape_str(g.shape()) +
                                       " for leaf of shape " + shape_str(leaf.shape()));
  }
  NoGradGuard no_grad;
  TensorImpl* impl = leaf.impl();
  std::lock_guard lock(impl->grad_mutex);
  Tensor incoming = g.dtype() == leaf.dtype() ? g : to_dtype(g, leaf.dtype());
  if (!impl->grad) {
    impl->grad = clone(incoming).impl_ptr();
  } else {
    impl->grad = add(Tensor(impl->grad), incoming).impl_ptr();
  }
}

void backward(const Tensor& root, const Tensor& upstream, BackwardOptions options) {
  MT_CHECK(root.defined() && root.requires_grad(), ErrorCode::NoGradient,
           "backward on a tensor that does not require grad");
  Tensor seed = upstream;
  if (!seed.defined()) {
    if (root.rank() != 0) {
      fail(ErrorCode::MissingUpstreamForNonScalar,
           "backward on non-scalar " + shape_str(root.shape()) + " needs an upstream gradient");
    }
    seed = ones({}, root.dtype());
  } else if (seed.shape() != root.shape()) {
    fail(ErrorCode::ShapeMismatch, "upstream " + shape_str(seed.shape()) + " for root " +
                                       shape_str(root.shape()));
  }

  NoGradGuard no_grad;
  const Edge root_edge = gradient_edge(root);

  // Dependency counts over the reachable graph.
  std::unordered_map<Node*, int> deps;
  std::unordered_set<Node*> seen{root_edge.node.get()};
  std::vector<Node*> stack{root_edge.node.get()};
  while (!stack.empty()) {
    Node* node = stack.back();
    stack.pop_back();
    if (node->released()) {
      fail(ErrorCode::DoubleBackwardWithoutRetain,
           "the graph through '" + node->name() +
               "' was already consumed by a backward pass; use retain_graph to run it twice");
    }
    for (const Edge& e : node->next_edges()) {
      if (!e.valid()) continue;
      ++deps[e.node.get()];
      if (seen.insert(e.node.get()).second) stack.push_back(e.node.get());
    }
  }

  // Ready nodes run newest-first, which keeps execution order deterministic.
  auto later = [](const std::shared_ptr<Node>& a, const std::shared_ptr<Node>& b) {
    return a->sequence_nr() < b->sequence_nr();
  };
  std::priority_queue<std::shared_ptr<Node>, std::vector<std::shared_ptr<Node>>, decltype(later)>
      ready(later);
  std::unordered_map<Node*, GradList> buffers;
  buffers[root_edge.node.get()] = GradList(root_edge.node->num_outputs());
  buffers[root_edge.node.get()][root_edge.input_nr] = seed;
  ready.push(root_edge.node);

  while (!ready.empty()) {
    std::shared_ptr<Node> node = ready.top();
    ready.pop();
    GradList grads = std::move(buffers[node.get()]);
    buffers.erase(node.get());
    grads.resize(node->num_outputs());

    GradList outputs = node->apply(std::move(grads));
    const auto& edges = node->next_edges();
    if (outputs.size() != edges.size()) {
      fail(ErrorCode::ArityMismatch, "'" + node->name() + "' returned " +
                                         std::to_string(outputs.size()) + " gradients for " +
                                         std::to_string(edges.size()) + " inputs");
    }
    if (!options.retain_graph) node->release();

    for (std::size_t i = 0; i < edges.size(); ++i) {
      const Edge& e = edges[i];
      if (!e.valid()) continue;
      if (outputs[i].defined()) {
        GradList& buffer = buffers[e.node.get()];
        if (buffer.empty()) buffer.resize(e.node->num_outputs());
        Tensor& slot = buffer[e.input_nr];
        slot = slot.defined() ? add(slot, outputs[i]) : outputs[i];
      }
      if (--deps[e.node.get()] == 0) ready.push(e.node);
    }
  }
}

// ---- custom functions ----------------------------------------------------------

void FunctionContext::save_for_backward(const std::vector<Tensor>& tensors) {
  for (const Tensor& t : tensors) saved_.emplace_back(t);
}

std::vector<Tensor> FunctionContext::saved_tensors() const {
  std::vector<Tensor> out;
  out.reserve(saved_.size());
  for (const auto& s : saved_) out.push_back(s.unpack(name_));
  return out;
}

std::vector<Tensor> apply_custom(const CustomFunction& fn, const std::vector<Tensor>& inputs) {
  auto ctx = std::make_shared<FunctionContext>();
  ctx->set_name(fn.name);
  std::vector<Tensor> outputs;
  {
    NoGradGuard no_grad;
    outputs = fn.forward(*ctx, inputs);
  }
  // An output that is literally an input gets its own identity, so attaching
  // history does not rewrite the caller's tensor.
  for (Tensor& out : outputs) {
    for (const Tensor& in : inputs) {
      if (in.defined() && out.impl() == in.impl()) {
        out = detach(out);
        break;
      }
    }
  }
  if (!grad_enabled() || !any_requires_grad(inputs)) return outputs;

  std::vector<Edge> edges;
  for (const Tensor& in : inputs) edges.push_back(gradient_edge(in));
  std::vector<std::pair<Shape, DType>> meta;
  for (const Tensor& out : outputs) meta.emplace_back(out.shape(), out.dtype());
  auto node = std::make_shared<CustomNode>(fn.name, std::move(edges), ctx, fn.backward, std::move(meta));
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (!is_floating(outputs[i].dtype())) continue;
    TensorImpl* impl = outputs[i].impl();
    impl->grad_fn = node;
    impl->output_nr = static_cast<std::uint32_t>(i);
    impl->requires_grad = true;
  }
  return outputs;
}

}  // namespace microtorch::autograd
