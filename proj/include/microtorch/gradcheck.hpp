#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "microtorch/tensor.hpp"

namespace microtorch::autograd {

struct GradcheckOptions {
  double h = 1e-6;
  double tol = 1e-4;
};

struct GradcheckResult {
  std::int64_t coords = 0;
  std::int64_t skipped = 0;
  double max_rel_err = 0.0;
  bool pass = true;
  std::string worst;  // "leaf i, coord j: analytic a, numeric n"
};

// Compares backward() of the scalar f() against central differences over
// every element of `leaves` (F64 leaves requiring grad, perturbed in place).
// Relative error is |analytic - numeric| / max(1, |analytic|). A coordinate
// whose left and right one-sided slopes differ by more than
// max(tol, 1e-5) * max(1, |analytic|) lies on a kink and is skipped. Throws NonScalarOutput if f() is
// not rank 0.
GradcheckResult gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                          const GradcheckOptions& options = {});

struct OpCheckReport {
  std::string op;
  int seeds = 0;
  std::int64_t coords = 0;
  std::int64_t skipped = 0;
  double max_rel_err = 0.0;
  bool pass = true;
};

// Built-in registry of differentiable ops and composites.
const std::vector<std::string>& gradcheck_ops();
bool has_gradcheck_op(const std::string& name);
// Runs the named check for seeds 1..seeds. Throws UnknownOp.
OpCheckReport run_gradcheck_op(const std::string& name, const GradcheckOptions& options, int seeds);

std::string format_text(const std::vector<OpCheckReport>& reports);
// One {"op","coords","skipped","seeds","max_rel_err","pass"} object per line.
std::string format_json_lines(const std::vector<OpCheckReport>& reports);

}  // namespace microtorch::autograd
