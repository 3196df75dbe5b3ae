#include <cmath>

#include "kernel_utils.hpp"
#include "microtorch/autograd.hpp"
#include "microtorch/ops.hpp"

namespace microtorch {

using autograd::GradList;
using autograd::NeedsGrad;
using autograd::SavedTensor;
using detail::View;

namespace {

SavedTensor save_if(bool needed, const Tensor& t) { return needed ? SavedTensor(t) : SavedTensor(); }

void check_same_dtype(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.dtype() != b.dtype()) {
    fail(ErrorCode::DTypeMismatch, std::string(op) + ": " + std::string(to_string(a.dtype())) +
                                       " vs " + std::string(to_string(b.dtype())));
  }
}

// out = f(a, b) with broadcasting; no autograd.
template <typename Fn>
Tensor binary_map(std::string_view label, const Tensor& a, const Tensor& b, Fn f) {
  check_same_dtype(a, b, label);
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  Tensor out = empty(out_shape, a.dtype());
  const View av = detail::view_of(a);
  const View bv = detail::view_of(b);
  const View ov = detail::view_of(out);
  Shape sa = detail::broadcast_strides(a, out_shape);
  Shape sb = detail::broadcast_strides(b, out_shape);
  const DType dtype = a.dtype();
  detail::launch(label, {a, b, out},
                 [av, bv, ov, sa = std::move(sa), sb = std::move(sb), dtype, f, name = std::string(label)] {
                   visit_numeric(dtype, name, [&]<typename T>() {
                     const T* pa = av.ptr<T>();
                     const T* pb = bv.ptr<T>();
                     T* po = ov.ptr<T>();
                     detail::for_each_offset<3>(ov.shape, {&sa, &sb, &ov.strides},
                                                [&](const auto& o) { po[o[2]] = f(pa[o[0]], pb[o[1]]); });
                   });
                 });
  return out;
}

template <typename Fn>
Tensor unary_map(std::string_view label, const Tensor& a, Fn f) {
  Tensor out = empty(a.shape(), a.dtype());
  const View av = detail::view_of(a);
  const View ov = detail::view_of(out);
  const DType dtype = a.dtype();
  detail::launch(label, {a, out}, [av, ov, dtype, f, name = std::string(label)] {
    visit_numeric(dtype, name, [&]<typename T>() {
      const T* pa = av.ptr<T>();
      T* po = ov.ptr<T>();
      detail::for_each_offset<2>(ov.shape, {&av.strides, &ov.strides},
                                 [&](const auto& o) { po[o[1]] = f(pa[o[0]]); });
    });
  });
  return out;
}

// target[i] = f(target[i], operand[i]) with operand broadcast to target.
template <typename Fn>
void inplace_binary(std::string_view label, const Tensor& target, const Tensor& operand, Fn f) {
  const View tv = detail::view_of(target);
  const View ov = detail::view_of(operand);
  Shape so = detail::broadcast_strides(operand, target.shape());
  const DType dtype = target.dtype();
  detail::launch(label, {target, operand},
                 [tv, ov, so = std::move(so), dtype, f, name = std::string(label)] {
                   visit_numeric(dtype, name, [&]<typename T>() {
                     T* pt = tv.ptr<T>();
                     const T* po = ov.ptr<T>();
                     detail::for_each_offset<2>(tv.shape, {&tv.strides, &so},
                                                [&](const auto& o) { pt[o[0]] = f(pt[o[0]], po[o[1]]); });
                   });
                 });
}

template <typename Fn>
void inplace_unary(std::string_view label, const Tensor& target, Fn f) {
  const View tv = detail::view_of(target);
  const DType dtype = target.dtype();
  detail::launch(label, {target}, [tv, dtype, f, name = std::string(label)] {
    visit_dtype(dtype, [&]<typename T>() {
      T* pt = tv.ptr<T>();
      detail::for_each_offset<1>(tv.shape, {&tv.strides},
                                 [&](const auto& o) { pt[o[0]] = f(pt[o[0]]); });
    });
  });
}

void require_floating(const Tensor& a, std::string_view op) {
  if (!is_floating(a.dtype())) {
    fail(ErrorCode::UnsupportedDType,
         std::string(op) + " requires a floating dtype, got " + std::string(to_string(a.dtype())));
  }
}

void require_numeric(const Tensor& a, std::string_view op) {
  if (a.dtype() == DType::Bool) {
    fail(ErrorCode::UnsupportedDType, std::string(op) + " does not support bool");
  }
}

void check_integer_divisor(const Tensor& b) {
  for (double v : to_host(b)) {
    MT_CHECK(v != 0.0, ErrorCode::DivisionByZero, "integer division by zero");
  }
}

// Enforces the in-place autograd rules before a mutation.
void check_inplace(const Tensor& target, const Tensor& operand, std::string_view op) {
  if (!autograd::grad_enabled()) return;
  const bool operand_grad = operand.defined() && operand.requires_grad();
  if (target.requires_grad() && target.is_leaf()) {
    fail(ErrorCode::InplaceOnLeafRequiringGrad,
         std::string(op) + " on a leaf tensor that requires grad");
  }
  if ((target.requires_grad() || operand_grad) &&
      (target.impl()->is_view || target.storage()->differentiable_alias())) {
    fail(ErrorCode::InplaceOnViewRequiringGrad,
         std::string(op) + " on a tensor whose storage is shared with a differentiable view");
  }
}

void check_inplace_broadcast(const Tensor& target, const Tensor& operand, std::string_view op) {
  const Shape out = broadcast_shapes(target.shape(), operand.shape());
  if (out != target.shape()) {
    fail(ErrorCode::BroadcastError, std::string(op) + ": operand " + shape_str(operand.shape()) +
                                        " does not broadcast to " + shape_str(target.shape()));
  }
}

// Records an in-place op: the new node consumes the target's previous
// history (edge 0) and the operand's (edge 1, if any), then becomes the
// target's producer.
void record_inplace(std::string_view op, const Tensor& target, const Tensor& operand,
                    std::vector<SavedTensor> saved, autograd::VjpFn vjp,
                    autograd::Edge previous) {
  const bool operand_grad = operand.defined() && operand.requires_grad();
  if (!autograd::grad_enabled() || !(target.requires_grad() || operand_grad)) return;
  std::vector<autograd::Edge> edges{std::move(previous)};
  if (operand.defined()) edges.push_back(autograd::gradient_edge(operand));
  auto node = std::make_shared<autograd::FunctionNode>(std::string(op), std::move(edges),
                                                       std::move(saved), std::move(vjp));
  autograd::rebase_history(target, std::move(node));
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(ErrorCode::BroadcastError,
           "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Tensor sum_to(const Tensor& t, const Shape& shape) {
  if (t.shape() == shape) return t;
  Tensor result = t;
  while (result.rank() > shape.size()) result = sum(result, 0, false);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 1 && result.shape()[i] != 1) result = sum(result, static_cast<int>(i), true);
  }
  MT_CHECK(result.shape() == shape, ErrorCode::ShapeMismatch,
           "cannot reduce " + shape_str(t.shape()) + " to " + shape_str(shape));
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_numeric(a, "add");
  Tensor out = binary_map("add", a, b, [](auto x, auto y) { return x + y; });
  autograd::record("add", {a, b}, {out}, {},
                   [sa = a.shape(), sb = b.shape()](const std::vector<Tensor>&, const GradList& g,
                                                    const NeedsGrad& needs) {
                     return GradList{needs[0] ? sum_to(g[0], sa) : Tensor(),
                                     needs[1] ? sum_to(g[0], sb) : Tensor()};
                   });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_numeric(a, "sub");
  Tensor out = binary_map("sub", a, b, [](auto x, auto y) { return x - y; });
  autograd::record("sub", {a, b}, {out}, {},
                   [sa = a.shape(), sb = b.shape()](const std::vector<Tensor>&, const GradList& g,
                                                    const NeedsGrad& needs) {
                     return GradList{needs[0] ? sum_to(g[0], sa) : Tensor(),
                                     needs[1] ? sum_to(neg(g[0]), sb) : Tensor()};
                   });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_numeric(a, "mul");
  Tensor out = binary_map("mul", a, b, [](auto x, auto y) { return x * y; });
  autograd::record("mul", {a, b}, {out},
                   {save_if(b.requires_grad(), a), save_if(a.requires_grad(), b)},
                   [sa = a.shape(), sb = b.shape()](const std::vector<Tensor>& s, const GradList& g,
                                                    const NeedsGrad& needs) {
                     return GradList{needs[0] ? sum_to(mul(g[0], s[1]), sa) : Tensor(),
                                     needs[1] ? sum_to(mul(g[0], s[0]), sb) : Tensor()};
                   });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_numeric(a, "div");
  check_same_dtype(a, b, "div");
  if (a.dtype() == DType::I64) check_integer_divisor(b);
  Tensor out = binary_map("div", a, b, [](auto x, auto y) { return x / y; });
  autograd::record("div", {a, b}, {out},
                   {save_if(b.requires_grad(), a), SavedTensor(b)},
                   [sa = a.shape(), sb = b.shape()](const std::vector<Tensor>& s, const GradList& g,
                                                    const NeedsGrad& needs) {
                     const Tensor& x = s[0];
                     const Tensor& y = s[1];
                     return GradList{
                         needs[0] ? sum_to(div(g[0], y), sa) : Tensor(),
                         needs[1] ? sum_to(neg(div(mul(g[0], x), mul(y, y))), sb) : Tensor()};
                   });
  return out;
}

Tensor add(const Tensor& a, double b) {
  require_numeric(a, "add_scalar");
  Tensor out = unary_map("add_scalar", a, [b](auto x) { return static_cast<decltype(x)>(x + b); });
  autograd::record("add_scalar", {a}, {out}, {},
                   [](const std::vector<Tensor>&, const GradList& g, const NeedsGrad&) {
                     return GradList{g[0]};
                   });
  return out;
}

Tensor mul(const Tensor& a, double b) {
  require_numeric(a, "mul_scalar");
  Tensor out = unary_map("mul_scalar", a, [b](auto x) { return static_cast<decltype(x)>(x * b); });
  autograd::record("mul_scalar", {a}, {out}, {},
                   [b](const std::vector<Tensor>&, const GradList& g, const NeedsGrad&) {
                     return GradList{mul(g[0], b)};
                   });
  return out;
}

Tensor neg(const Tensor& a) {
  require_numeric(a, "neg");
  Tensor out = unary_map("neg", a, [](auto x) { return static_cast<decltype(x)>(-x); });
  autograd::record("neg", {a}, {out}, {},
                   [](const std::vector<Tensor>&, const GradList& g, const NeedsGrad&) {
                     return GradList{neg(g[0])};
                   });
  return out;
}

Tensor exp(const Tensor& a) {
  require_floating(a, "exp");
  Tensor out = unary_map("exp", a, [](auto x) { return static_cast<decltype(x)>(std::exp(x)); });
  autograd::record("exp", {a}, {out}, {SavedTensor(out)},
                   [](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad&) {
                     return GradList{mul(g[0], s[0])};
                   });
  return out;
}

Tensor log(const Tensor& a) {
  require_floating(a, "log");
  Tensor out = unary_map("log", a, [](auto x) { return static_cast<decltype(x)>(std::log(x)); });
  autograd::record("log", {a}, {out}, {SavedTensor(a)},
                   [](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad&) {
                     return GradList{div(g[0], s[0])};
                   });
  return out;
}

Tensor sqrt(const Tensor& a) {
  require_floating(a, "sqrt");
  Tensor out = unary_map("sqrt", a, [](auto x) { return static_cast<decltype(x)>(std::sqrt(x)); });
  autograd::record("sqrt", {a}, {out}, {SavedTensor(out)},
                   [](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad&) {
                     return GradList{div(g[0], mul(s[0], 2.0))};
                   });
  return out;
}

Tensor relu(const Tensor& a) {
  require_numeric(a, "relu");
  Tensor out = unary_map("relu", a, [](auto x) { return x > 0 ? x : decltype(x){0}; });
  autograd::record("relu", {a}, {out}, {SavedTensor(a)},
                   [](const std::vector<Tensor>& s, const GradList& g, const NeedsGrad&) {
                     // Gradient at exactly 0 is 0.
                     return GradList{binary_map("relu_backward", g[0], s[0], [](auto gv, auto x) {
                       return x > 0 ? gv : decltype(gv){0};
                     })};
                   });
  return out;
}

// ---- in-place ----------------------------------------------------------------

Tensor& Tensor::add_(const Tensor& other, double alpha) {
  require_numeric(*this, "add_");
  check_same_dtype(*this, other, "add_");
  check_inplace_broadcast(*this, other, "add_");
  check_inplace(*this, other, "add_");
  autograd::Edge previous = autograd::gradient_edge(*this);
  if (alpha == 1.0) {
    inplace_binary("add_", *this, other, [](auto x, auto y) { return x + y; });
  } else {
    inplace_binary("add_", *this, other, [alpha](auto x, auto y) {
      return static_cast<decltype(x)>(x + alpha * y);
    });
  }
  storage()->bump_version();
  record_inplace("add_", *this, other, {},
                 [alpha, so = other.shape()](const std::vector<Tensor>&, const GradList& g,
                                             const NeedsGrad& needs) {
                   Tensor og;
                   if (needs[1]) og = sum_to(alpha == 1.0 ? g[0] : mul(g[0], alpha), so);
                   return GradList{g[0], og};
                 },
                 std::move(previous));
  return *this;
}

Tensor& Tensor::add_(double value) {
  require_numeric(*this, "add_");
  check_inplace(*this, Tensor(), "add_");
  autograd::Edge previous = autograd::gradient_edge(*this);
  inplace_unary("add_scalar_", *this,
                [value](auto x) { return static_cast<decltype(x)>(x + value); });
  storage()->bump_version();
  record_inplace("add_scalar_", *this, Tensor(), {},
                 [](const std::vector<Tensor>&, const GradList& g, const NeedsGrad&) {
                   return GradList{g[0]};
                 },
                 std::move(previous));
  return *this;
}

Tensor& Tensor::mul_(const Tensor& other) {
  require_numeric(*this, "mul_");
  check_same_dtype(*this, other, "mul_");
  check_inplace_broadcast(*this, other, "mul_");
  check_inplace(*this, other, "mul_");
  autograd::Edge previous = autograd::gradient_edge(*this);
  // The pre-mutation target is needed only for the operand's gradient; it is
  // pinned at its current version, so backward through it reports the
  // mutation instead of silently using the new values.
  std::vector<SavedTensor> saved{save_if(requires_grad(), other),
                                 save_if(other.requires_grad() && autograd::grad_enabled(), *this)};
  inplace_binary("mul_", *this, other, [](auto x, auto y) { return x * y; });
  storage()->bump_version();
  record_inplace("mul_", *this, other, std::move(saved),
                 [so = other.shape()](const std::vector<Tensor>& s, const GradList& g,
                                      const NeedsGrad& needs) {
                   return GradList{needs[0] ? mul(g[0], s[0]) : Tensor(),
                                   needs[1] ? sum_to(mul(g[0], s[1]), so) : Tensor()};
                 },
                 std::move(previous));
  return *this;
}

Tensor& Tensor::mul_(double value) {
  require_numeric(*this, "mul_");
  check_inplace(*this, Tensor(), "mul_");
  autograd::Edge previous = autograd::gradient_edge(*this);
  inplace_unary("mul_scalar_", *this, [value](auto x) {
    if constexpr (std::is_same_v<decltype(x), bool>) {
      return x && value != 0.0;
    } else {
      return static_cast<decltype(x)>(static_cast<double>(x) * value);
    }
  });
  storage()->bump_version();
  record_inplace("mul_scalar_", *this, Tensor(), {},
                 [value](const std::vector<Tensor>&, const GradList& g, const NeedsGrad&) {
                   return GradList{mul(g[0], value)};
                 },
                 std::move(previous));
  return *this;
}

Tensor& Tensor::fill_(double value) {
  check_inplace(*this, Tensor(), "fill_");
  autograd::Edge previous = autograd::gradient_edge(*this);
  inplace_unary("fill_", *this, [value](auto x) { return static_cast<decltype(x)>(value); });
  storage()->bump_version();
  record_inplace("fill_", *this, Tensor(), {},
                 [](const std::vector<Tensor>&, const GradList&, const NeedsGrad&) {
                   return GradList{Tensor()};
                 },
                 std::move(previous));
  return *this;
}

Tensor& Tensor::zero_() { return fill_(0.0); }

Tensor& Tensor::copy_(const Tensor& src) {
  check_inplace_broadcast(*this, src, "copy_");
  check_inplace(*this, src, "copy_");
  autograd::Edge previous = autograd::gradient_edge(*this);
  const View tv = detail::view_of(*this);
  const View sv = detail::view_of(src);
  Shape ss = detail::broadcast_strides(src, shape());
  const DType st = src.dtype();
  const DType dt = dtype();
  detail::launch("copy_", {*this, src}, [tv, sv, ss = std::move(ss), st, dt] {
    visit_dtype(st, [&]<typename S>() {
      visit_dtype(dt, [&]<typename D>() {
        const S* ps = sv.ptr<S>();
        D* pd = tv.ptr<D>();
        detail::for_each_offset<2>(tv.shape, {&ss, &tv.strides},
                                   [&](const auto& o) { pd[o[1]] = static_cast<D>(ps[o[0]]); });
      });
    });
  });
  storage()->bump_version();
  record_inplace("copy_", *this, src, {},
                 [ss = src.shape(), st](const std::vector<Tensor>&, const GradList& g,
                                        const NeedsGrad& needs) {
                   Tensor sg;
                   if (needs[1]) {
                     sg = sum_to(g[0], ss);
                     if (sg.dtype() != st) sg = to_dtype(sg, st);
                   }
                   return GradList{Tensor(), sg};
                 },
                 std::move(previous));
  return *this;
}

}  // namespace microtorch
