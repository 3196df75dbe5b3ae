#include "microtorch/bench.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "microtorch/autograd.hpp"
#include "microtorch/data.hpp"
#include "microtorch/ops.hpp"
#include "microtorch/profiler.hpp"
#include "microtorch/random.hpp"
#include "microtorch/serialize.hpp"

namespace microtorch::bench {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Cycles through epochs of a loader, one batch per call.
class BatchStream {
 public:
  BatchStream(std::shared_ptr<data::Dataset> dataset, data::LoaderConfig config)
      : loader_(std::move(dataset), config) {}

  data::Sample next() {
    for (;;) {
      if (!epoch_) epoch_ = loader_.epoch(epoch_index_++);
      if (auto batch = epoch_->next()) return std::move(batch->fields);
      epoch_.reset();
    }
  }

 private:
  data::DataLoader loader_;
  std::unique_ptr<data::EpochIterator> epoch_;
  std::uint64_t epoch_index_ = 0;
};

data::LoaderConfig loader_config(const RunConfig& c) {
  data::LoaderConfig lc;
  lc.batch_size = c.batch;
  lc.drop_last = true;
  lc.num_workers = c.workers;
  lc.seed = c.seed;
  lc.shuffle = true;
  return lc;
}

class Trainer {
 public:
  virtual ~Trainer() = default;
  // Runs one training iteration and returns its (scalar) loss tensor.
  virtual Tensor step(int iter) = 0;
  virtual NamedTensors state() const = 0;
};

class MlpTrainer final : public Trainer {
 public:
  explicit MlpTrainer(const RunConfig& c)
      : model_({4, 32, 3}, c.seed),
        opt_(model_.parameters(), {.lr = 0.1}),
        batches_(std::make_shared<data::BlobsDataset>(c.batch * c.iters, 4, 3, c.seed),
                 loader_config(c)) {}

  Tensor step(int) override {
    opt_.zero_grad();
    data::Sample batch = batches_.next();
    Tensor loss = cross_entropy(model_.forward(batch[0]), batch[1]);
    autograd::backward(loss);
    opt_.step();
    return loss;
  }

  NamedTensors state() const override { return model_.state(); }

 private:
  nn::Mlp model_;
  optim::SGD opt_;
  BatchStream batches_;
};

class CnnTrainer final : public Trainer {
 public:
  explicit CnnTrainer(const RunConfig& c)
      : model_(c.seed),
        opt_(model_.parameters()),
        batches_(std::make_shared<data::DigitsDataset>(c.batch * c.iters, c.seed), loader_config(c)) {}

  Tensor step(int) override {
    opt_.zero_grad();
    data::Sample batch = batches_.next();
    Tensor loss = cross_entropy(model_.logits(batch[0]), batch[1]);
    autograd::backward(loss);
    opt_.step();
    return loss;
  }

  NamedTensors state() const override { return model_.state(); }

 private:
  nn::FullBasicModel model_;
  optim::Adam opt_;
  BatchStream batches_;
};

class GanTrainer final : public Trainer {
 public:
  explicit GanTrainer(const RunConfig& c)
      : gan_(c.seed),
        seed_(c.seed),
        batches_(std::make_shared<data::BlobsDataset>(c.batch * c.iters, Gan::kDataDim, 2, c.seed),
                 loader_config(c)) {}

  Tensor step(int iter) override {
    gan_.optim_d.zero_grad();
    gan_.optim_g.zero_grad();
    data::Sample batch = batches_.next();
    GanLosses losses = gan_step(gan_, batch[0], mix_seed(seed_, 0x6A09E667ull + static_cast<std::uint64_t>(iter)));
    return scalar(losses.d_real + losses.d_fake + losses.g, DType::F64);
  }

  NamedTensors state() const override {
    NamedTensors out;
    for (auto& [name, t] : gan_.generator.named_parameters()) out.emplace("generator." + name, t);
    for (auto& [name, t] : gan_.discriminator.named_parameters()) out.emplace("discriminator." + name, t);
    return out;
  }

 private:
  Gan gan_;
  std::uint64_t seed_;
  BatchStream batches_;
};

std::unique_ptr<Trainer> make_trainer(const RunConfig& c) {
  if (c.model == "mlp") return std::make_unique<MlpTrainer>(c);
  if (c.model == "cnn") return std::make_unique<CnnTrainer>(c);
  if (c.model == "gan") return std::make_unique<GanTrainer>(c);
  fail(ErrorCode::InvalidArgument, "unknown model '" + c.model + "' (expected mlp, cnn or gan)");
}

// Restores executor and tracer settings when a run ends, even on error.
class RunScope {
 public:
  explicit RunScope(const RunConfig& c) : tracing_(c.trace.has_value()) {
    Executor& ex = Executor::global();
    ex.synchronize();
    ex.set_mode(c.mode);
    ex.set_sim_kernel_us(c.sim_kernel_us);
    if (tracing_) {
      Tracer::global().flush();
      Tracer::global().enable(true);
    }
  }
  ~RunScope() {
    Executor& ex = Executor::global();
    try {
      ex.synchronize();
    } catch (...) {
    }
    ex.set_sim_kernel_us(0);
    if (tracing_) Tracer::global().enable(false);
  }

 private:
  bool tracing_;
};

}  // namespace

Gan::Gan(std::uint64_t seed)
    : generator({kNoiseDim, 32, kDataDim}, mix_seed(seed, 101)),
      discriminator({kDataDim, 32, 2}, mix_seed(seed, 202)),
      optim_g(generator.parameters()),
      optim_d(discriminator.parameters()) {}

GanLosses gan_step(Gan& gan, const Tensor& real, std::uint64_t noise_seed,
                   const std::function<void()>& after_phase1) {
  const std::int64_t n = real.size(0);
  const Tensor real_label = full({n}, 1.0, DType::I64);
  const Tensor fake_label = zeros({n}, DType::I64);
  gan.optim_d.zero_grad();
  gan.optim_g.zero_grad();

  // (1) discriminator
  Tensor err_d_real = cross_entropy(gan.discriminator.forward(real), real_label);
  autograd::backward(err_d_real);
  Tensor fake = gan.generator.forward(randn({n, Gan::kNoiseDim}, noise_seed));
  Tensor err_d_fake = cross_entropy(gan.discriminator.forward(autograd::detach(fake)), fake_label);
  autograd::backward(err_d_fake);
  gan.optim_d.step();
  if (after_phase1) after_phase1();

  // (2) generator
  Tensor err_g = cross_entropy(gan.discriminator.forward(fake), real_label);
  autograd::backward(err_g);
  gan.optim_g.step();

  return {err_d_real.item(), err_d_fake.item(), err_g.item()};
}

RunReport run_benchmark(const RunConfig& c) {
  MT_CHECK(c.iters >= 1, ErrorCode::InvalidArgument, "--iters must be >= 1");
  MT_CHECK(c.batch >= 1, ErrorCode::InvalidArgument, "--batch must be >= 1");
  MT_CHECK(c.workers >= 0, ErrorCode::InvalidArgument, "--workers must be >= 0");
  MT_CHECK(c.sim_kernel_us >= 0, ErrorCode::InvalidArgument, "--sim-kernel-us must be >= 0");

  RunReport report;
  report.config = c;
  std::vector<TraceEvent> events;
  {
    RunScope scope(c);
    Executor& ex = Executor::global();
    CachingAllocator& alloc = CachingAllocator::global();
    std::unique_ptr<Trainer> trainer = make_trainer(c);
    ex.synchronize();

    for (int i = 0; i < c.iters; ++i) {
      const AllocStats before = alloc.stats();
      alloc.reset_peak();
      const auto start = Clock::now();
      double loss = 0.0;
      {
        Tensor l = trainer->step(i);
        ex.synchronize();
        loss = l.item();
      }
      IterRecord rec;
      rec.ms = ms_since(start);
      rec.loss = loss;
      const AllocStats after = alloc.stats();
      rec.alloc.raw_alloc_count = after.raw_alloc_count - before.raw_alloc_count;
      rec.alloc.raw_free_count = after.raw_free_count - before.raw_free_count;
      rec.alloc.cache_hit_count = after.cache_hit_count - before.cache_hit_count;
      rec.alloc.peak_bytes_in_use = after.peak_bytes_in_use;
      report.iterations.push_back(rec);
    }

    if (c.checkpoint) save_checkpoint(*c.checkpoint, trainer->state());
    if (c.trace) {
      ex.synchronize();
      events = Tracer::global().flush();
    }
  }

  report.warmup_ms = report.iterations.front().ms;
  std::vector<double> timed;
  for (std::size_t i = 1; i < report.iterations.size(); ++i) timed.push_back(report.iterations[i].ms);
  if (timed.empty()) timed.push_back(report.warmup_ms);
  report.timed_iters = static_cast<int>(timed.size());
  report.total_ms = std::accumulate(timed.begin(), timed.end(), 0.0);
  report.iter_ms_mean = report.total_ms / static_cast<double>(timed.size());
  double ss = 0.0;
  for (double t : timed) ss += (t - report.iter_ms_mean) * (t - report.iter_ms_mean);
  report.iter_ms_sd = timed.size() > 1 ? std::sqrt(ss / static_cast<double>(timed.size() - 1)) : 0.0;
  report.throughput = report.total_ms > 0.0
                          ? static_cast<double>(c.batch) * report.timed_iters / (report.total_ms / 1000.0)
                          : 0.0;

  if (c.trace) {
    report.trace_events = events.size();
    write_chrome_trace(*c.trace, events);
  }
  if (c.alloc_stats) {
    std::ofstream out(*c.alloc_stats);
    if (!out) fail(ErrorCode::IoError, "cannot write " + c.alloc_stats->string());
    out << alloc_stats_json(report).dump(2) << '\n';
  }
  return report;
}

namespace {

nlohmann::ordered_json delta_json(const AllocDelta& d) {
  nlohmann::ordered_json j;
  j["raw_alloc_count"] = d.raw_alloc_count;
  j["raw_free_count"] = d.raw_free_count;
  j["cache_hit_count"] = d.cache_hit_count;
  j["peak_bytes_in_use"] = d.peak_bytes_in_use;
  return j;
}

}  // namespace

nlohmann::ordered_json report_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.config.model;
  j["mode"] = std::string(to_string(r.config.mode));
  j["iters"] = r.config.iters;
  j["batch"] = r.config.batch;
  j["seed"] = r.config.seed;
  j["workers"] = r.config.workers;
  j["iter_ms_mean"] = r.iter_ms_mean;
  j["iter_ms_sd"] = r.iter_ms_sd;
  j["throughput"] = r.throughput;
  j["timed_iters"] = r.timed_iters;
  j["total_ms"] = r.total_ms;
  j["warmup_ms"] = r.warmup_ms;
  j["final_loss"] = r.iterations.back().loss;
  nlohmann::ordered_json losses = nlohmann::ordered_json::array();
  for (const auto& it : r.iterations) losses.push_back(it.loss);
  j["losses"] = losses;
  nlohmann::ordered_json alloc = nlohmann::ordered_json::array();
  for (const auto& it : r.iterations) alloc.push_back(delta_json(it.alloc));
  j["alloc"] = alloc;
  if (r.config.trace) j["trace_events"] = r.trace_events;
  return j;
}

nlohmann::ordered_json alloc_stats_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.config.model;
  j["mode"] = std::string(to_string(r.config.mode));
  nlohmann::ordered_json iters = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.iterations.size(); ++i) {
    nlohmann::ordered_json row = delta_json(r.iterations[i].alloc);
    row["iteration"] = i + 1;
    row["ms"] = r.iterations[i].ms;
    iters.push_back(row);
  }
  j["iterations"] = iters;
  return j;
}

AllocStressReport run_allocstress(const AllocStressConfig& c) {
  MT_CHECK(c.pairs >= 1, ErrorCode::InvalidArgument, "--pairs must be >= 1");
  MT_CHECK(c.size >= 1, ErrorCode::InvalidArgument, "--size must be >= 1");
  MT_CHECK(c.latency_ns >= 0, ErrorCode::InvalidArgument, "latency must be >= 0");
  auto backend = std::make_shared<HostBackend>(HostBackendOptions{.latency_ns = c.latency_ns});
  CachingAllocator alloc(backend, {.caching = c.cached});
  const auto start = Clock::now();
  for (std::int64_t i = 0; i < c.pairs; ++i) {
    BlockRef b = alloc.allocate(c.size, kDefaultStream);
    alloc.free(b);
  }
  const double ns = std::chrono::duration<double, std::nano>(Clock::now() - start).count();
  AllocStressReport r;
  r.config = c;
  r.ns_per_pair = ns / static_cast<double>(c.pairs);
  r.stats = alloc.stats();
  return r;
}

nlohmann::ordered_json allocstress_json(const AllocStressReport& r) {
  nlohmann::ordered_json j;
  j["backend"] = r.config.cached ? "cached" : "raw";
  j["pairs"] = r.config.pairs;
  j["size"] = r.config.size;
  j["latency_ns"] = r.config.latency_ns;
  j["ns_per_pair"] = r.ns_per_pair;
  j["raw_alloc_count"] = r.stats.raw_alloc_count;
  j["raw_free_count"] = r.stats.raw_free_count;
  j["cache_hit_count"] = r.stats.cache_hit_count;
  return j;
}

}  // namespace microtorch::bench
