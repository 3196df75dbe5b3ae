#pragma once

#include <any>
#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "microtorch/tensor.hpp"

namespace microtorch::autograd {

// Per-thread switch for graph recording.
bool grad_enabled();
void set_grad_enabled(bool enabled);

class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// One gradient per slot; an undefined Tensor means "no gradient".
using GradList = std::vector<Tensor>;

class Node;

struct Edge {
  std::shared_ptr<Node> node;
  std::uint32_t input_nr = 0;

  bool valid() const { return node != nullptr; }
};

// An input pinned for backward. Holds its own alias of the storage (so it
// counts towards use_count) and the version observed at save time.
class SavedTensor {
 public:
  SavedTensor() = default;
  explicit SavedTensor(const Tensor& tensor);

  // Returns the saved data, or throws VersionMismatch naming `op` if the
  // storage was mutated after saving.
  Tensor unpack(std::string_view op) const;

  const Tensor& data() const { return data_; }
  std::uint64_t expected_version() const { return expected_version_; }
  bool defined() const { return data_.defined(); }
  void reset() { data_ = Tensor(); }

 private:
  Tensor data_;
  std::uint64_t expected_version_ = 0;
};

// A vertex of the recorded graph. Holds edges to the producers of its inputs
// and never a strong reference to its own outputs.
class Node : public std::enable_shared_from_this<Node> {
 public:
  Node(std::string name, std::vector<Edge> next_edges, std::uint32_t num_outputs = 1);
  virtual ~Node() = default;

  const std::string& name() const { return name_; }
  const std::vector<Edge>& next_edges() const { return next_edges_; }
  std::uint32_t num_outputs() const { return num_outputs_; }
  std::uint64_t sequence_nr() const { return sequence_nr_; }

  // Maps upstream gradients (one per output) to one gradient per input edge.
  virtual GradList apply(GradList grads) = 0;

  // Drops saved state after a non-retaining backward.
  virtual void release() { released_ = true; }
  bool released() const { return released_; }

  virtual std::vector<const SavedTensor*> saved_tensors() const { return {}; }

 private:
  std::string name_;
  std::vector<Edge> next_edges_;
  std::uint32_t num_outputs_;
  std::uint64_t sequence_nr_;
  bool released_ = false;
};

// Which input edges expect a gradient.
using NeedsGrad = std::vector<bool>;

// Receives already-unpacked saved tensors plus upstream gradients. Entries of
// `saved` that were never saved (undefined SavedTensor) unpack as undefined.
using VjpFn = std::function<GradList(const std::vector<Tensor>& saved, const GradList& grads,
                                     const NeedsGrad& needs)>;

// Node built from a VJP closure, used by every built-in op.
class FunctionNode final : public Node {
 public:
  FunctionNode(std::string name, std::vector<Edge> edges, std::vector<SavedTensor> saved,
               VjpFn vjp, std::uint32_t num_outputs = 1);

  GradList apply(GradList grads) override;
  void release() override;
  std::vector<const SavedTensor*> saved_tensors() const override;

 private:
  std::vector<SavedTensor> saved_;
  VjpFn vjp_;
};

// Leaf sink: adds incoming gradients into the leaf's .grad.
class AccumulateGrad final : public Node {
 public:
  explicit AccumulateGrad(std::shared_ptr<TensorImpl> leaf);
  GradList apply(GradList grads) override;
  // Shared by every graph that touches the leaf, so it is never consumed.
  void release() override {}
  const std::shared_ptr<TensorImpl>& leaf() const { return leaf_; }

 private:
  std::shared_ptr<TensorImpl> leaf_;
};

bool any_requires_grad(std::initializer_list<Tensor> tensors);
bool any_requires_grad(const std::vector<Tensor>& tensors);

// Edge feeding gradients into `tensor`'s producer (or its leaf accumulator);
// invalid when the tensor does not require grad.
Edge gradient_edge(const Tensor& tensor);

// Attaches a new node to `outputs` when recording is enabled and any input
// requires grad; otherwise a no-op. Returns the node (or nullptr).
std::shared_ptr<Node> record(std::string_view op_name, const std::vector<Tensor>& inputs,
                             const std::vector<Tensor>& outputs, std::vector<SavedTensor> saved,
                             VjpFn vjp);

// Points `tensor` at `node` as its producer (used by in-place ops).
void rebase_history(const Tensor& tensor, std::shared_ptr<Node> node);

struct BackwardOptions {
  bool retain_graph = false;
};

// Reverse-mode sweep from `root`. `upstream` may be omitted only for rank-0
// roots. Leaf gradients accumulate into .grad; the graph is consumed unless
// retain_graph is set.
void backward(const Tensor& root, const Tensor& upstream = Tensor(), BackwardOptions options = {});

// leaf.grad = g when absent, else leaf.grad + g. Serialized per leaf.
void accumulate_grad(const Tensor& leaf, const Tensor& g);

// Shares storage, requires_grad = false, no history.
Tensor detach(const Tensor& tensor);

// ---------------------------------------------------------------------------
// User-defined differentiable functions.

class FunctionContext {
 public:
  void save_for_backward(const std::vector<Tensor>& tensors);
  // Version-checked; throws VersionMismatch naming the function.
  std::vector<Tensor> saved_tensors() const;

  // Arbitrary non-tensor state shared between forward and backward.
  std::map<std::string, std::any>& values() { return values_; }

  void set_name(std::string name) { name_ = std::move(name); }
  const std::string& name() const { return name_; }

  void release() { saved_.clear(); }
  const std::vector<SavedTensor>& saved() const { return saved_; }

 private:
  std::string name_;
  std::vector<SavedTensor> saved_;
  std::map<std::string, std::any> values_;
};

struct CustomFunction {
  std::string name;
  // Runs with recording suspended.
  std::function<std::vector<Tensor>(FunctionContext&, const std::vector<Tensor>&)> forward;
  // Must return exactly one entry per forward input; undefined = no gradient.
  std::function<GradList(FunctionContext&, const GradList&)> backward;
};

std::vector<Tensor> apply_custom(const CustomFunction& fn, const std::vector<Tensor>& inputs);

}  // namespace microtorch::autograd
