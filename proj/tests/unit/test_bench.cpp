#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cli_runner.hpp"
#include "microtorch/bench.hpp"
#include "microtorch/serialize.hpp"

using namespace microtorch;
using nlohmann::json;

namespace {

using mt_test::CliResult;
using mt_test::run_cli;

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("microtorch_bench_" + name);
  std::filesystem::remove_all(p);
  return p;
}

json strip_timing(json report) {
  for (const char* key : {"iter_ms_mean", "iter_ms_sd", "throughput", "total_ms", "warmup_ms"}) {
    report.erase(key);
  }
  return report;
}

}  // namespace

TEST(BenchCli, RunEmitsReportWithStableFields) {
  const CliResult r = run_cli("run --model mlp --mode sync --iters 4 --batch 8 --seed 3");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const json report = json::parse(r.out);
  for (const char* key : {"model", "mode", "iters", "batch", "seed", "iter_ms_mean", "iter_ms_sd",
                          "throughput", "alloc"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_EQ(report["model"], "mlp");
  EXPECT_EQ(report["mode"], "sync");
  EXPECT_EQ(report["iters"], 4);
  EXPECT_EQ(report["alloc"].size(), 4u);
}

TEST(BenchCli, BadFlagsExitWithTwo) {
  EXPECT_EQ(run_cli("run --model resnet").exit_code, 2);
  EXPECT_EQ(run_cli("run").exit_code, 2);
  EXPECT_EQ(run_cli("run --model mlp --iters 0").exit_code, 2);
  EXPECT_EQ(run_cli("run --model mlp --mode eager").exit_code, 2);
  EXPECT_EQ(run_cli("allocstress --backend disk").exit_code, 2);
  EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
  EXPECT_EQ(run_cli("").exit_code, 2);
}

TEST(BenchCli, UnknownGradcheckOpExitsWithTwo) {
  const CliResult r = run_cli("gradcheck --op nosuch");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("nosuch"), std::string::npos) << r.err;
}

TEST(BenchCli, SingleOpGradcheckReport) {
  const CliResult r = run_cli("gradcheck --op matmul --format json");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const json row = json::parse(line);
    EXPECT_EQ(row["op"], "matmul");
    EXPECT_TRUE(row["pass"].get<bool>());
    EXPECT_LE(row["max_rel_err"].get<double>(), 1e-4);
    ++count;
  }
  EXPECT_EQ(count, 1);

  const CliResult text = run_cli("gradcheck --op softmax --seeds 2");
  EXPECT_EQ(text.exit_code, 0);
  EXPECT_NE(text.out.find("softmax"), std::string::npos);
}

TEST(BenchCli, ImpossibleToleranceFailsWithOne) {
  EXPECT_EQ(run_cli("gradcheck --op exp --tol 1e-30 --seeds 1").exit_code, 1);
}

TEST(BenchCli, RuntimeFailureExitsWithOne) {
  const CliResult r = run_cli("run --model mlp --iters 2 --checkpoint /proc/no/such/dir");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_FALSE(r.err.empty());
}

TEST(BenchCli, NonTimingFieldsAreReproducible) {
  for (const char* model : {"mlp", "gan"}) {
    const std::string args = std::string("run --model ") + model + " --iters 5 --batch 8 --seed 4";
    const CliResult a = run_cli(args);
    const CliResult b = run_cli(args);
    ASSERT_EQ(a.exit_code, 0) << a.err;
    ASSERT_EQ(b.exit_code, 0) << b.err;
    EXPECT_EQ(strip_timing(json::parse(a.out)), strip_timing(json::parse(b.out))) << model;
  }
}

TEST(BenchCli, AllocStatsAndTraceFiles) {
  const auto stats_path = scratch("stats.json");
  const auto trace_path = scratch("trace.json");
  const CliResult r = run_cli("run --model mlp --iters 3 --sim-kernel-us 50 --alloc-stats " +
                              stats_path.string() + " --trace " + trace_path.string());
  ASSERT_EQ(r.exit_code, 0) << r.err;

  std::ifstream stats_file(stats_path);
  const json stats = json::parse(stats_file);
  const json& iters = stats["iterations"];
  ASSERT_EQ(iters.size(), 3u);
  for (std::size_t i = 0; i < iters.size(); ++i) {
    EXPECT_EQ(iters[i]["iteration"], i + 1);
    for (const char* key : {"raw_alloc_count", "raw_free_count", "cache_hit_count", "peak_bytes_in_use", "ms"}) {
      EXPECT_TRUE(iters[i].contains(key)) << key << " in " << iters[i].dump();
    }
  }
  EXPECT_GT(iters[0]["raw_alloc_count"].get<int>(), 0);
  EXPECT_EQ(iters[2]["raw_alloc_count"], 0);

  std::ifstream trace_file(trace_path);
  const json trace = json::parse(trace_file);
  std::map<std::uint64_t, int> enqueue_count, execute_count;
  int complete = 0;
  for (const json& e : trace["traceEvents"]) {
    if (e["ph"] != "X") continue;
    ++complete;
    EXPECT_EQ(e["pid"], 1);
    const auto id = e["args"]["correlation_id"].get<std::uint64_t>();
    if (e["tid"] == 0) {
      ++enqueue_count[id];
    } else {
      ++execute_count[id];
    }
  }
  EXPECT_GT(complete, 0);
  for (const auto& [id, n] : execute_count) {
    EXPECT_EQ(n, 1);
    EXPECT_EQ(enqueue_count[id], 1) << id;
  }
  std::filesystem::remove_all(stats_path);
  std::filesystem::remove_all(trace_path);
}

TEST(BenchCli, AllocStressCounts) {
  const CliResult cached = run_cli("allocstress --pairs 500 --size 3000 --backend cached");
  ASSERT_EQ(cached.exit_code, 0) << cached.err;
  const json c = json::parse(cached.out);
  EXPECT_EQ(c["cache_hit_count"], 499);
  EXPECT_EQ(c["raw_alloc_count"], 1);

  const CliResult raw = run_cli("allocstress --pairs 500 --size 3000 --backend raw");
  ASSERT_EQ(raw.exit_code, 0) << raw.err;
  const json w = json::parse(raw.out);
  EXPECT_EQ(w["raw_alloc_count"], 500);
  EXPECT_EQ(w["cache_hit_count"], 0);
}

TEST(BenchCli, SyncAndAsyncCheckpointsMatchForMlp) {
  const auto a = scratch("ckpt_async");
  const auto s = scratch("ckpt_sync");
  ASSERT_EQ(run_cli("run --model mlp --mode async --iters 6 --seed 2 --checkpoint " + a.string()).exit_code, 0);
  ASSERT_EQ(run_cli("run --model mlp --mode sync --iters 6 --seed 2 --checkpoint " + s.string()).exit_code, 0);
  const NamedTensors ta = load_checkpoint(a);
  const NamedTensors ts = load_checkpoint(s);
  ASSERT_EQ(ta.size(), ts.size());
  for (const auto& [name, t] : ta) EXPECT_TRUE(bitwise_equal(t, ts.at(name))) << name;
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(s);
}

TEST(BenchReport, ThroughputMatchesDefinition) {
  bench::RunConfig config;
  config.model = "mlp";
  config.iters = 6;
  config.batch = 16;
  const bench::RunReport report = bench::run_benchmark(config);
  ASSERT_EQ(report.iterations.size(), 6u);
  EXPECT_EQ(report.timed_iters, 5);
  double total = 0.0;
  for (std::size_t i = 1; i < report.iterations.size(); ++i) total += report.iterations[i].ms;
  EXPECT_NEAR(report.total_ms, total, 1e-9 * std::max(1.0, total));
  EXPECT_NEAR(report.throughput, 16.0 * 5 / (report.total_ms / 1000.0), 1e-6 * report.throughput);
  EXPECT_NEAR(report.iter_ms_mean, total / 5, 1e-9);
  EXPECT_EQ(report.warmup_ms, report.iterations[0].ms);
  EXPECT_EQ(Executor::global().mode(), ExecMode::Async);  // restored
}

TEST(BenchReport, WarmupAllocatesThenCacheServes) {
  for (const char* model : {"mlp", "gan"}) {
    CachingAllocator::global().empty_cache();
    bench::RunConfig config;
    config.model = model;
    config.iters = 5;
    const auto report = bench::run_benchmark(config);
    EXPECT_GT(report.iterations[0].alloc.raw_alloc_count, 0u) << model;
    for (std::size_t i = 1; i < report.iterations.size(); ++i) {
      EXPECT_EQ(report.iterations[i].alloc.raw_alloc_count, 0u) << model << " iter " << i;
      EXPECT_GT(report.iterations[i].alloc.cache_hit_count, 0u) << model << " iter " << i;
    }
  }
}

TEST(BenchGan, PhaseOneLeavesGeneratorUntouched) {
  bench::Gan gan(5);
  Tensor real = randn({8, bench::Gan::kDataDim}, 6);
  for (int step = 0; step < 5; ++step) {
    std::vector<Tensor> before;
    for (const Tensor& p : gan.generator.parameters()) before.push_back(clone(p));
    bool checked = false;
    const auto losses = bench::gan_step(gan, real, 100 + static_cast<std::uint64_t>(step), [&] {
      const auto params = gan.generator.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_TRUE(bitwise_equal(params[i], before[i]));
        EXPECT_FALSE(params[i].grad());
      }
      checked = true;
    });
    EXPECT_TRUE(checked);
    EXPECT_TRUE(std::isfinite(losses.d_real));
    EXPECT_TRUE(std::isfinite(losses.d_fake));
    EXPECT_TRUE(std::isfinite(losses.g));
  }
}
