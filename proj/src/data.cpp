#include "microtorch/data.hpp"

#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>

#include "microtorch/ops.hpp"
#include "microtorch/random.hpp"

namespace microtorch::data {

std::vector<std::int64_t> sequential_order(std::int64_t n) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(std::max<std::int64_t>(n, 0)));
  std::iota(order.begin(), order.end(), 0);
  return order;
}

std::vector<std::int64_t> shuffled_order(std::int64_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::int64_t> order = sequential_order(n);
  Xoshiro256 rng(mix_seed(seed, epoch));
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Sample collate(const std::vector<Sample>& samples) {
  MT_CHECK(!samples.empty(), ErrorCode::CollateError, "empty batch");
  const std::size_t arity = samples.front().size();
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].size() != arity) {
      fail(ErrorCode::CollateError, "sample " + std::to_string(s) + " has " +
                                        std::to_string(samples[s].size()) + " fields, expected " +
                                        std::to_string(arity));
    }
  }
  Sample out;
  out.reserve(arity);
  for (std::size_t f = 0; f < arity; ++f) {
    std::vector<Tensor> column;
    column.reserve(samples.size());
    const Tensor& first = samples.front()[f];
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const Tensor& t = samples[s][f];
      if (t.shape() != first.shape() || t.dtype() != first.dtype()) {
        fail(ErrorCode::CollateError,
             "field " + std::to_string(f) + " of sample " + std::to_string(s) + " is " +
                 std::string(to_string(t.dtype())) + shape_str(t.shape()) + ", expected " +
                 std::string(to_string(first.dtype())) + shape_str(first.shape()));
      }
      column.push_back(t);
    }
    out.push_back(stack(column));
  }
  return out;
}

void hand_off(const Batch& batch, const Event& ready, StreamId consumer) {
  if (ready.stream() != consumer) Executor::global().wait_event(consumer, ready);
  for (const Tensor& t : batch.fields) t.storage()->record_use(consumer);
}

// ---- loader --------------------------------------------------------------------

namespace {

struct SampleFailure {
  std::int64_t index;
  std::string what;
};

}  // namespace

DataLoader::DataLoader(std::shared_ptr<const Dataset> dataset, LoaderConfig config)
    : dataset_(std::move(dataset)), config_(config) {
  MT_CHECK(dataset_ != nullptr, ErrorCode::InvalidArgument, "DataLoader needs a dataset");
  MT_CHECK(config_.batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
  MT_CHECK(config_.num_workers >= 0, ErrorCode::InvalidArgument, "num_workers must be >= 0");
  MT_CHECK(config_.prefetch_depth >= 1, ErrorCode::InvalidArgument, "prefetch_depth must be >= 1");
}

std::int64_t DataLoader::num_batches() const {
  const std::int64_t n = dataset_->size();
  return config_.drop_last ? n / config_.batch_size
                           : (n + config_.batch_size - 1) / config_.batch_size;
}

std::vector<std::vector<std::int64_t>> DataLoader::plan(std::uint64_t epoch) const {
  const std::int64_t n = dataset_->size();
  const std::vector<std::int64_t> order =
      config_.shuffle ? shuffled_order(n, config_.seed, epoch) : sequential_order(n);
  std::vector<std::vector<std::int64_t>> batches;
  const std::int64_t count = num_batches();
  for (std::int64_t b = 0; b < count; ++b) {
    const std::int64_t begin = b * config_.batch_size;
    const std::int64_t end = std::min(begin + config_.batch_size, n);
    batches.emplace_back(order.begin() + begin, order.begin() + end);
  }
  return batches;
}

std::unique_ptr<EpochIterator> DataLoader::epoch(std::uint64_t epoch) const {
  return std::unique_ptr<EpochIterator>(new EpochIterator(dataset_, config_, plan(epoch)));
}

EpochIterator::EpochIterator(std::shared_ptr<const Dataset> dataset, LoaderConfig config,
                             std::vector<std::vector<std::int64_t>> batches)
    : dataset_(std::move(dataset)), config_(config), batches_(std::move(batches)) {
  for (int w = 0; w < config_.num_workers; ++w) {
    workers_.emplace_back([this, w] { worker_main(w); });
  }
}

EpochIterator::~EpochIterator() { stop_workers(); }

void EpochIterator::stop_workers() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  consumed_cv_.notify_all();
  for (auto& t : workers_) t.join();
  workers_.clear();
}

Batch EpochIterator::produce(std::int64_t b) const {
  Batch batch;
  batch.index = b;
  batch.indices = batches_[static_cast<std::size_t>(b)];
  std::vector<Sample> samples;
  samples.reserve(batch.indices.size());
  for (std::int64_t i : batch.indices) {
    try {
      samples.push_back(dataset_->get(i));
    } catch (const std::exception& e) {
      throw SampleFailure{i, e.what()};
    }
  }
  batch.fields = collate(samples);
  return batch;
}

void EpochIterator::worker_main(int worker) {
  const auto count = static_cast<std::int64_t>(batches_.size());
  const std::int64_t k = config_.num_workers;
  const StreamId stream{kWorkerStreamBase + worker};
  StreamGuard guard(stream);
  for (std::int64_t b = worker; b < count; b += k) {
    {
      std::unique_lock lock(mutex_);
      consumed_cv_.wait(lock, [&] { return stop_ || b < next_ + config_.prefetch_depth * k; });
      if (stop_) return;
    }
    Slot slot;
    try {
      slot.batch = produce(b);
      slot.ready = Executor::global().record_event(stream);
    } catch (const SampleFailure& f) {
      slot.error = "worker " + std::to_string(worker) + " failed on index " +
                   std::to_string(f.index) + ": " + f.what;
    } catch (const std::exception& e) {
      slot.error = "worker " + std::to_string(worker) + " failed on batch " + std::to_string(b) +
                   ": " + e.what();
    }
    const bool failed = !slot.error.empty();
    {
      std::lock_guard lock(mutex_);
      done_.emplace(b, std::move(slot));
    }
    produced_cv_.notify_all();
    if (failed) return;
  }
}

std::optional<Batch> EpochIterator::next() {
  if (next_ >= static_cast<std::int64_t>(batches_.size())) return std::nullopt;
  const std::int64_t b = next_;
  if (workers_.empty()) {
    ++next_;
    try {
      return produce(b);
    } catch (const SampleFailure& f) {
      fail(ErrorCode::WorkerCrashed, "failed on index " + std::to_string(f.index) + ": " + f.what);
    }
  }
  Slot slot;
  {
    std::unique_lock lock(mutex_);
    produced_cv_.wait(lock, [&] { return done_.count(b) != 0; });
    auto node = done_.extract(b);
    slot = std::move(node.mapped());
    ++next_;
  }
  consumed_cv_.notify_all();
  if (!slot.error.empty()) fail(ErrorCode::WorkerCrashed, slot.error);
  hand_off(*slot.batch, slot.ready, current_stream());
  return std::move(slot.batch);
}

// ---- synthetic datasets -----------------------------------------------------

BlobsDataset::BlobsDataset(std::int64_t n, std::int64_t dim, std::int64_t classes, std::uint64_t seed)
    : n_(n), dim_(dim), classes_(classes) {
  MT_CHECK(n >= 0 && dim >= 1 && classes >= 1, ErrorCode::InvalidArgument,
           "blobs needs n >= 0, d >= 1, classes >= 1");
  Xoshiro256 rng(seed);
  const double phase = rng.uniform() * 2.0 * std::numbers::pi;
  std::vector<double> centers(static_cast<std::size_t>(classes * dim), 0.0);
  for (std::int64_t c = 0; c < classes; ++c) {
    const double angle = phase + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    double* center = &centers[static_cast<std::size_t>(c * dim)];
    center[0] = 4.0 * std::cos(angle);
    if (dim > 1) center[1] = 4.0 * std::sin(angle);
  }
  features_.resize(static_cast<std::size_t>(n * dim));
  labels_.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t label = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(classes)));
    labels_[static_cast<std::size_t>(i)] = label;
    for (std::int64_t j = 0; j < dim; ++j) {
      features_[static_cast<std::size_t>(i * dim + j)] =
          centers[static_cast<std::size_t>(label * dim + j)] + rng.normal();
    }
  }
}

Sample BlobsDataset::get(std::int64_t index) const {
  MT_CHECK(index >= 0 && index < n_, ErrorCode::InvalidArgument,
           "blobs index " + std::to_string(index) + " out of range");
  const auto* row = &features_[static_cast<std::size_t>(index * dim_)];
  return {create(std::span<const double>(row, static_cast<std::size_t>(dim_)), {dim_}),
          scalar(static_cast<double>(labels_[static_cast<std::size_t>(index)]), DType::I64)};
}

namespace {

constexpr const char* kGlyphs[10][8] = {
    {"..####..", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", ".##..##.", "..####.."},
    {"...##...", "..###...", ".####...", "...##...", "...##...", "...##...", "...##...", ".######."},
    {"..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".##.....", ".######."},
    {"..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".....##.", ".##..##.", "..####.."},
    {"....##..", "...###..", "..####..", ".##.##..", ".######.", "....##..", "....##..", "....##.."},
    {".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".....##.", ".##..##.", "..####.."},
    {"..####..", ".##.....", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.", "..####.."},
    {".######.", ".....##.", "....##..", "...##...", "..##....", "..##....", "..##....", "..##...."},
    {"..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", ".##..##.", "..####.."},
    {"..####..", ".##..##.", ".##..##.", "..#####.", ".....##.", ".....##.", ".....##.", "..####.."},
};

}  // namespace

DigitsDataset::DigitsDataset(std::int64_t n, std::uint64_t seed, std::int64_t side)
    : n_(n), side_(side), seed_(seed) {
  MT_CHECK(n >= 0 && side >= 8, ErrorCode::InvalidArgument, "digits needs n >= 0 and size >= 8");
}

Sample DigitsDataset::get(std::int64_t index) const {
  MT_CHECK(index >= 0 && index < n_, ErrorCode::InvalidArgument,
           "digits index " + std::to_string(index) + " out of range");
  Xoshiro256 rng(mix_seed(seed_, static_cast<std::uint64_t>(index)));
  const auto label = static_cast<std::int64_t>(rng.below(10));
  std::vector<double> pixels(static_cast<std::size_t>(side_ * side_));
  for (std::int64_t y = 0; y < side_; ++y) {
    for (std::int64_t x = 0; x < side_; ++x) {
      const char cell = kGlyphs[label][y * 8 / side_][x * 8 / side_];
      pixels[static_cast<std::size_t>(y * side_ + x)] = (cell == '#' ? 1.0 : 0.0) + 0.1 * rng.normal();
    }
  }
  return {create(pixels, {1, side_, side_}), scalar(static_cast<double>(label), DType::I64)};
}

namespace {

std::map<std::string, std::int64_t> parse_params(std::string_view text, std::string_view descriptor) {
  std::map<std::string, std::int64_t> out;
  while (!text.empty()) {
    const std::size_t comma = text.find(',');
    const std::string_view item = text.substr(0, comma);
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorCode::InvalidArgument, "expected key=value in dataset descriptor '" + std::string(descriptor) + "'");
    }
    const std::string_view value = item.substr(eq + 1);
    std::int64_t parsed = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), parsed);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
      fail(ErrorCode::InvalidArgument, "bad integer '" + std::string(value) + "' in dataset descriptor");
    }
    out[std::string(item.substr(0, eq))] = parsed;
    text = comma == std::string_view::npos ? std::string_view() : text.substr(comma + 1);
  }
  return out;
}

std::int64_t take(std::map<std::string, std::int64_t>& params, const std::string& key,
                  std::optional<std::int64_t> fallback = std::nullopt) {
  auto it = params.find(key);
  if (it == params.end()) {
    if (fallback) return *fallback;
    fail(ErrorCode::InvalidArgument, "dataset descriptor is missing '" + key + "'");
  }
  const std::int64_t v = it->second;
  params.erase(it);
  return v;
}

}  // namespace

std::shared_ptr<Dataset> make_dataset(std::string_view descriptor) {
  const std::size_t colon = descriptor.find(':');
  const std::string_view kind = descriptor.substr(0, colon);
  auto params = parse_params(colon == std::string_view::npos ? std::string_view() : descriptor.substr(colon + 1), descriptor);
  std::shared_ptr<Dataset> out;
  if (kind == "blobs") {
    const auto n = take(params, "n");
    const auto d = take(params, "d");
    const auto c = take(params, "classes");
    const auto s = take(params, "seed", 0);
    out = std::make_shared<BlobsDataset>(n, d, c, static_cast<std::uint64_t>(s));
  } else if (kind == "digits") {
    const auto n = take(params, "n");
    const auto s = take(params, "seed", 0);
    const auto side = take(params, "size", 28);
    out = std::make_shared<DigitsDataset>(n, static_cast<std::uint64_t>(s), side);
  } else {
    fail(ErrorCode::InvalidArgument, "unknown dataset kind '" + std::string(kind) + "'");
  }
  if (!params.empty()) {
    fail(ErrorCode::InvalidArgument, "unknown key '" + params.begin()->first + "' in dataset descriptor");
  }
  return out;
}

}  // namespace microtorch::data
