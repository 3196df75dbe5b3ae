#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "microtorch/bench.hpp"
#include "microtorch/error.hpp"
#include "microtorch/gradcheck.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

using namespace microtorch;

int run_cmd(bench::RunConfig config, const std::string& mode, const std::string& trace,
            const std::string& alloc_stats, const std::string& checkpoint) {
  config.mode = exec_mode_from_string(mode);
  if (!trace.empty()) config.trace = trace;
  if (!alloc_stats.empty()) config.alloc_stats = alloc_stats;
  if (!checkpoint.empty()) config.checkpoint = checkpoint;
  const bench::RunReport report = bench::run_benchmark(config);
  std::cout << bench::report_json(report).dump(2) << '\n';
  return 0;
}

int gradcheck_cmd(const std::string& op, const autograd::GradcheckOptions& options, int seeds,
                  const std::string& format) {
  std::vector<std::string> ops;
  if (op.empty()) {
    ops = autograd::gradcheck_ops();
  } else if (autograd::has_gradcheck_op(op)) {
    ops.push_back(op);
  } else {
    std::cerr << "UnknownOp: no gradcheck registered for '" << op << "'\n";
    return kExitUsage;
  }
  std::vector<autograd::OpCheckReport> reports;
  bool all_pass = true;
  for (const auto& name : ops) {
    reports.push_back(autograd::run_gradcheck_op(name, options, seeds));
    all_pass = all_pass && reports.back().pass;
  }
  std::cout << (format == "json" ? autograd::format_json_lines(reports) : autograd::format_text(reports));
  return all_pass ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  const CLI::Range kPositive(1.0, 1e15, "POSITIVE");
  const CLI::Range kNonNegative(0.0, 1e15, "NONNEGATIVE");
  CLI::App app{"microtorch benchmark harness"};
  app.require_subcommand(1);

  bench::RunConfig run;
  std::string mode(to_string(Executor::global().mode()));
  std::string trace, alloc_stats, checkpoint;
  auto* run_app = app.add_subcommand("run", "train a benchmark model and report timings");
  run_app->add_option("--model", run.model, "model to train")
      ->required()
      ->check(CLI::IsMember({"mlp", "cnn", "gan"}));
  run_app->add_option("--mode", mode, "execution mode")->check(CLI::IsMember({"sync", "async"}));
  run_app->add_option("--iters", run.iters, "training iterations")->check(kPositive);
  run_app->add_option("--batch", run.batch, "batch size")->check(kPositive);
  run_app->add_option("--seed", run.seed, "random seed");
  run_app->add_option("--trace", trace, "write a Chrome trace to this file");
  run_app->add_option("--alloc-stats", alloc_stats, "write per-iteration allocator stats");
  run_app->add_option("--workers", run.workers, "data loader workers")->check(kNonNegative);
  run_app->add_option("--sim-kernel-us", run.sim_kernel_us, "minimum simulated kernel duration")
      ->check(kNonNegative);
  run_app->add_option("--checkpoint", checkpoint, "save final parameters to this directory");

  std::string op, format = "text";
  autograd::GradcheckOptions gc_options;
  int seeds = 5;
  auto* gc_app = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc_app->set_help_flag("--help", "print this help message and exit");
  gc_app->add_option("--op", op, "single op to check (default: all)");
  gc_app->add_option("--tol", gc_options.tol, "max relative error")->check(CLI::PositiveNumber);
  gc_app->add_option("--h", gc_options.h, "finite-difference step")->check(CLI::PositiveNumber);
  gc_app->add_option("--seeds", seeds, "seeds per op")->check(kPositive);
  gc_app->add_option("--format", format, "report format")->check(CLI::IsMember({"text", "json"}));

  bench::AllocStressConfig stress;
  std::string backend = "cached";
  double latency_us = 1.0;
  auto* stress_app = app.add_subcommand("allocstress", "time allocate/free pairs");
  stress_app->add_option("--pairs", stress.pairs, "allocate/free pairs")->check(kPositive);
  stress_app->add_option("--size", stress.size, "bytes per allocation")->check(kPositive);
  stress_app->add_option("--backend", backend, "allocator mode")->check(CLI::IsMember({"cached", "raw"}));
  stress_app->add_option("--latency-us", latency_us, "injected raw backend latency")
      ->check(kNonNegative);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run_app) return run_cmd(run, mode, trace, alloc_stats, checkpoint);
    if (*gc_app) return gradcheck_cmd(op, gc_options, seeds, format);
    if (*stress_app) {
      stress.cached = backend == "cached";
      stress.latency_ns = static_cast<std::int64_t>(latency_us * 1000.0);
      std::cout << bench::allocstress_json(bench::run_allocstress(stress)).dump(2) << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
