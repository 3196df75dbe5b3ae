#include "microtorch/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "microtorch/autograd.hpp"
#include "microtorch/nn.hpp"
#include "microtorch/ops.hpp"
#include "microtorch/random.hpp"

namespace microtorch::autograd {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard no_grad;
  Tensor y = f();
  MT_CHECK(y.rank() == 0, ErrorCode::NonScalarOutput,
           "gradcheck needs a scalar function, got " + shape_str(y.shape()));
  return y.item();
}

}  // namespace

GradcheckResult gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                          const GradcheckOptions& options) {
  for (const Tensor& leaf : leaves) {
    MT_CHECK(leaf.dtype() == DType::F64, ErrorCode::UnsupportedDType, "gradcheck needs f64 leaves");
    MT_CHECK(leaf.requires_grad() && leaf.is_leaf(), ErrorCode::InvalidArgument,
             "gradcheck inputs must be leaves requiring grad");
  }
  for (Tensor leaf : leaves) leaf.clear_grad();
  {
    Tensor y = f();
    MT_CHECK(y.rank() == 0, ErrorCode::NonScalarOutput,
             "gradcheck needs a scalar function, got " + shape_str(y.shape()));
    backward(y);
  }
  std::vector<std::vector<double>> analytic;
  for (const Tensor& leaf : leaves) {
    Tensor g = leaf.grad();
    analytic.push_back(g.defined() ? to_host(g) : std::vector<double>(leaf.numel(), 0.0));
  }

  // Slope jumps below this are finite-difference noise, not kinks, whatever the tolerance.
  constexpr double kMinKinkJump = 1e-5;
  GradcheckResult result;
  const double h = options.h;
  const double f0 = evaluate(f);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    std::vector<double> host = to_host(leaf);
    auto set = [&](std::size_t j, double v) {
      host[j] = v;
      NoGradGuard no_grad;
      leaf.copy_(create(host, leaf.shape(), DType::F64));
    };
    for (std::size_t j = 0; j < host.size(); ++j) {
      const double original = host[j];
      set(j, original + h);
      const double fp = evaluate(f);
      set(j, original - h);
      const double fm = evaluate(f);
      set(j, original);

      ++result.coords;
      const double a = analytic[li][j];
      const double scale = std::max(1.0, std::abs(a));
      const double left = (f0 - fm) / h;
      const double right = (fp - f0) / h;
      if (std::abs(left - right) > std::max(options.tol, kMinKinkJump) * scale) {
        ++result.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(a - numeric) / scale;
      if (err > result.max_rel_err || std::isnan(err)) {
        result.max_rel_err = std::isnan(err) ? INFINITY : err;
        char buf[160];
        std::snprintf(buf, sizeof buf, "leaf %zu, coord %zu: analytic %.10g, numeric %.10g", li, j, a,
                      numeric);
        result.worst = buf;
      }
    }
  }
  result.pass = result.max_rel_err <= options.tol;
  for (Tensor leaf : leaves) leaf.clear_grad();
  return result;
}

// ---- registry ----------------------------------------------------------------

namespace {

struct Case {
  std::function<Tensor()> f;
  std::vector<Tensor> leaves;
};

using Builder = std::function<Case(std::uint64_t seed)>;

Tensor leaf(const Shape& shape, std::uint64_t seed) {
  return randn(shape, seed, DType::F64).set_requires_grad(true);
}

// Values in [0.5, 2) so log, sqrt and division stay well conditioned.
Tensor positive_leaf(const Shape& shape, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (double& x : v) x = 0.5 + 1.5 * rng.uniform();
  return create(v, shape, DType::F64).set_requires_grad(true);
}

Tensor weights(const Shape& shape, std::uint64_t seed) { return randn(shape, seed, DType::F64); }

Tensor labels(std::int64_t n, std::int64_t classes, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = static_cast<double>(rng.below(static_cast<std::uint64_t>(classes)));
  return create(v, {n}, DType::I64);
}

// sum(out * R) for a fixed random R.
Tensor project(const Tensor& out, const Tensor& r) { return sum(mul(out, r)); }

Builder unary(Tensor (*op)(const Tensor&), bool positive = false) {
  return [op, positive](std::uint64_t s) {
    Tensor a = positive ? positive_leaf({3, 4}, mix_seed(s, 1)) : leaf({3, 4}, mix_seed(s, 1));
    Tensor r = weights({3, 4}, mix_seed(s, 2));
    return Case{[=] { return project(op(a), r); }, {a}};
  };
}

Builder binary(Tensor (*op)(const Tensor&, const Tensor&), Shape sa, Shape sb, bool positive_b = false,
               std::optional<Shape> out_shape = std::nullopt) {
  return [=](std::uint64_t s) {
    Tensor a = leaf(sa, mix_seed(s, 1));
    Tensor b = positive_b ? positive_leaf(sb, mix_seed(s, 2)) : leaf(sb, mix_seed(s, 2));
    Tensor r = weights(out_shape ? *out_shape : broadcast_shapes(sa, sb), mix_seed(s, 3));
    return Case{[=] { return project(op(a, b), r); }, {a, b}};
  };
}

Builder reduction(std::function<Tensor(const Tensor&)> op, Shape out_shape) {
  return [=](std::uint64_t s) {
    Tensor a = leaf({3, 4, 2}, mix_seed(s, 1));
    Tensor r = weights(out_shape, mix_seed(s, 2));
    return Case{[=] { return project(op(a), r); }, {a}};
  };
}

const std::map<std::string, Builder>& registry() {
  static const std::map<std::string, Builder> ops = [] {
    std::map<std::string, Builder> m;
    m["add"] = binary(add, {3, 4}, {4});
    m["sub"] = binary(sub, {3, 4}, {3, 1});
    m["mul"] = binary(mul, {2, 3, 4}, {3, 1});
    m["div"] = binary(div, {3, 4}, {3, 4}, true);
    m["add_scalar"] = unary([](const Tensor& a) { return add(a, 0.75); });
    m["mul_scalar"] = unary([](const Tensor& a) { return mul(a, -1.5); });
    m["neg"] = unary(neg);
    m["exp"] = unary(exp);
    m["log"] = unary(log, true);
    m["sqrt"] = unary(sqrt, true);
    m["relu"] = unary(relu);
    m["clone"] = unary(clone);
    m["matmul"] = binary(matmul, {3, 4}, {4, 2}, false, Shape{3, 2});
    m["matmul_transposed"] = [](std::uint64_t s) {
      Tensor a = leaf({4, 3}, mix_seed(s, 1));
      Tensor b = leaf({4, 2}, mix_seed(s, 2));
      Tensor r = weights({3, 2}, mix_seed(s, 3));
      return Case{[=] { return project(matmul(transpose(a, 0, 1), b), r); }, {a, b}};
    };
    m["conv2d"] = [](std::uint64_t s) {
      Tensor x = leaf({1, 2, 5, 5}, mix_seed(s, 1));
      Tensor w = leaf({3, 2, 3, 3}, mix_seed(s, 2));
      Tensor b = leaf({3}, mix_seed(s, 3));
      Tensor r = weights({1, 3, 3, 3}, mix_seed(s, 4));
      return Case{[=] { return project(conv2d(x, w, b), r); }, {x, w, b}};
    };
    m["conv2d_strided"] = [](std::uint64_t s) {
      Tensor x = leaf({2, 2, 6, 6}, mix_seed(s, 1));
      Tensor w = leaf({2, 2, 3, 3}, mix_seed(s, 2));
      Tensor b = leaf({2}, mix_seed(s, 3));
      Tensor r = weights({2, 2, 3, 3}, mix_seed(s, 4));
      return Case{[=] { return project(conv2d(x, w, b, {2, 1}), r); }, {x, w, b}};
    };
    m["sum"] = reduction([](const Tensor& a) { return sum(a); }, {});
    m["sum_axis"] = reduction([](const Tensor& a) { return sum(a, 1); }, {3, 2});
    m["mean"] = reduction([](const Tensor& a) { return mean(a); }, {});
    m["mean_axis"] = reduction([](const Tensor& a) { return mean(a, 2, true); }, {3, 4, 1});
    m["max"] = reduction([](const Tensor& a) { return max(a); }, {});
    m["max_axis"] = reduction([](const Tensor& a) { return max(a, 0); }, {4, 2});
    m["softmax"] = reduction([](const Tensor& a) { return softmax(a, 1); }, {3, 4, 2});
    m["log_softmax"] = reduction([](const Tensor& a) { return log_softmax(a, -1); }, {3, 4, 2});
    m["dropout"] = [](std::uint64_t s) {
      Tensor a = leaf({4, 5}, mix_seed(s, 1));
      Tensor r = weights({4, 5}, mix_seed(s, 2));
      const std::uint64_t mask_seed = mix_seed(s, 3);
      return Case{[=] { return project(dropout(a, 0.3, true, mask_seed), r); }, {a}};
    };
    m["reshape"] = reduction([](const Tensor& a) { return reshape(a, {4, -1}); }, {4, 6});
    m["transpose"] = reduction([](const Tensor& a) { return transpose(a, 0, 2); }, {2, 4, 3});
    m["slice"] = reduction([](const Tensor& a) { return slice(a, 1, 1, 3); }, {3, 2, 2});
    m["contiguous"] =
        reduction([](const Tensor& a) { return flatten(contiguous(transpose(a, 1, 2))); }, {3, 8});
    m["mse_loss"] = [](std::uint64_t s) {
      Tensor p = leaf({4, 3}, mix_seed(s, 1));
      Tensor t = leaf({4, 3}, mix_seed(s, 2));
      return Case{[=] { return mse_loss(p, t); }, {p, t}};
    };
    m["nll_loss"] = [](std::uint64_t s) {
      Tensor x = leaf({5, 4}, mix_seed(s, 1));
      Tensor y = labels(5, 4, mix_seed(s, 2));
      return Case{[=] { return nll_loss(log_softmax(x, 1), y); }, {x}};
    };
    m["cross_entropy"] = [](std::uint64_t s) {
      Tensor x = leaf({6, 3}, mix_seed(s, 1));
      Tensor y = labels(6, 3, mix_seed(s, 2));
      return Case{[=] { return cross_entropy(x, y); }, {x}};
    };
    m["linear"] = [](std::uint64_t s) {
      auto layer = std::make_shared<nn::Linear>(4, 3, mix_seed(s, 1), DType::F64);
      Tensor x = leaf({5, 4}, mix_seed(s, 2));
      Tensor r = weights({5, 3}, mix_seed(s, 3));
      std::vector<Tensor> leaves{x};
      for (const Tensor& p : layer->parameters()) leaves.push_back(p);
      return Case{[=] { return project(layer->forward(x), r); }, leaves};
    };
    m["mlp"] = [](std::uint64_t s) {
      auto model = std::make_shared<nn::Mlp>(std::vector<std::int64_t>{3, 5, 2}, mix_seed(s, 1),
                                             DType::F64);
      Tensor x = leaf({4, 3}, mix_seed(s, 2));
      Tensor y = labels(4, 2, mix_seed(s, 3));
      std::vector<Tensor> leaves{x};
      for (const Tensor& p : model->parameters()) leaves.push_back(p);
      return Case{[=] { return cross_entropy(model->forward(x), y); }, leaves};
    };
    m["full_cnn"] = [](std::uint64_t s) {
      nn::BasicModelConfig config{.channels = 2, .side = 6, .classes = 3, .kernel = 3};
      auto model = std::make_shared<nn::FullBasicModel>(mix_seed(s, 1), config, DType::F64);
      Tensor x = leaf({2, 1, 6, 6}, mix_seed(s, 2));
      Tensor r = weights({2, 3}, mix_seed(s, 3));
      std::vector<Tensor> leaves{x};
      for (const Tensor& p : model->parameters()) leaves.push_back(p);
      return Case{[=] { return project(model->forward(x), r); }, leaves};
    };
    return m;
  }();
  return ops;
}

}  // namespace

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, builder] : registry()) out.push_back(name);
    return out;
  }();
  return names;
}

bool has_gradcheck_op(const std::string& name) { return registry().count(name) != 0; }

OpCheckReport run_gradcheck_op(const std::string& name, const GradcheckOptions& options, int seeds) {
  auto it = registry().find(name);
  if (it == registry().end()) fail(ErrorCode::UnknownOp, "no gradcheck registered for '" + name + "'");
  MT_CHECK(seeds >= 1, ErrorCode::InvalidArgument, "seeds must be >= 1");
  OpCheckReport report;
  report.op = name;
  report.seeds = seeds;
  for (int s = 1; s <= seeds; ++s) {
    Case c = it->second(static_cast<std::uint64_t>(s));
    GradcheckResult r = gradcheck(c.f, c.leaves, options);
    report.coords += r.coords;
    report.skipped += r.skipped;
    report.max_rel_err = std::max(report.max_rel_err, r.max_rel_err);
    report.pass = report.pass && r.pass;
  }
  return report;
}

std::string format_text(const std::vector<OpCheckReport>& reports) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %6s %8s %8s %12s  %s\n", "op", "seeds", "coords", "skipped",
                "max_rel_err", "result");
  out << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-22s %6d %8lld %8lld %12.3e  %s\n", r.op.c_str(), r.seeds,
                  static_cast<long long>(r.coords), static_cast<long long>(r.skipped), r.max_rel_err,
                  r.pass ? "PASS" : "FAIL");
    out << line;
  }
  return out.str();
}

std::string format_json_lines(const std::vector<OpCheckReport>& reports) {
  std::ostringstream out;
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["op"] = r.op;
    j["coords"] = r.coords;
    j["skipped"] = r.skipped;
    j["seeds"] = r.seeds;
    j["max_rel_err"] = r.max_rel_err;
    j["pass"] = r.pass;
    out << j.dump() << '\n';
  }
  return out.str();
}

}  // namespace microtorch::autograd
