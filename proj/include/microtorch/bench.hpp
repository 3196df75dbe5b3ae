#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "microtorch/allocator.hpp"
#include "microtorch/executor.hpp"
#include "microtorch/nn.hpp"
#include "microtorch/optim.hpp"

namespace microtorch::bench {

struct RunConfig {
  std::string model = "mlp";  // mlp | cnn | gan
  ExecMode mode = ExecMode::Async;
  int iters = 10;
  std::int64_t batch = 8;
  std::uint64_t seed = 1;
  int workers = 0;
  std::int64_t sim_kernel_us = 0;
  std::optional<std::filesystem::path> trace;
  std::optional<std::filesystem::path> alloc_stats;
  std::optional<std::filesystem::path> checkpoint;
};

struct AllocDelta {
  std::uint64_t raw_alloc_count = 0;
  std::uint64_t raw_free_count = 0;
  std::uint64_t cache_hit_count = 0;
  std::uint64_t peak_bytes_in_use = 0;
};

struct IterRecord {
  double ms = 0.0;
  double loss = 0.0;
  AllocDelta alloc;
};

struct RunReport {
  RunConfig config;
  std::vector<IterRecord> iterations;
  double warmup_ms = 0.0;
  int timed_iters = 0;     // iterations after the warm-up one
  double total_ms = 0.0;   // wall time of the timed iterations
  double iter_ms_mean = 0.0;
  double iter_ms_sd = 0.0;
  double throughput = 0.0; // samples per second over the timed iterations
  std::uint64_t trace_events = 0;
};

// Trains the configured model on its synthetic dataset. Switches the global
// executor to config.mode for the duration of the run.
RunReport run_benchmark(const RunConfig& config);

nlohmann::ordered_json report_json(const RunReport& report);
nlohmann::ordered_json alloc_stats_json(const RunReport& report);

// Two MLPs trained adversarially with separate Adam instances. The
// discriminator emits two logits (index 1 = real).
struct Gan {
  static constexpr std::int64_t kNoiseDim = 8;
  static constexpr std::int64_t kDataDim = 2;

  explicit Gan(std::uint64_t seed);

  nn::Mlp generator;
  nn::Mlp discriminator;
  optim::Adam optim_g;
  optim::Adam optim_d;
};

struct GanLosses {
  double d_real = 0.0;
  double d_fake = 0.0;
  double g = 0.0;
};

// One adversarial step: (1) discriminator on real and detached fake samples,
// one backward each, then optim_d.step(); (2) generator through the
// discriminator, then optim_g.step(). `after_phase1` runs between the two.
GanLosses gan_step(Gan& gan, const Tensor& real, std::uint64_t noise_seed,
                   const std::function<void()>& after_phase1 = {});

struct AllocStressConfig {
  std::int64_t pairs = 10000;
  std::size_t size = 4096;
  bool cached = true;
  std::int64_t latency_ns = 1000;
};

struct AllocStressReport {
  AllocStressConfig config;
  double ns_per_pair = 0.0;
  AllocStats stats;
};

AllocStressReport run_allocstress(const AllocStressConfig& config);
nlohmann::ordered_json allocstress_json(const AllocStressReport& report);

}  // namespace microtorch::bench
