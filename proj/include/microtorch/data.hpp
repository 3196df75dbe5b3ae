#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "microtorch/executor.hpp"
#include "microtorch/tensor.hpp"

namespace microtorch::data {

// One sample or one batch: an ordered tuple of tensors.
using Sample = std::vector<Tensor>;

class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::int64_t size() const = 0;
  // Must be pure: the same index always yields equal tensors.
  virtual Sample get(std::int64_t index) const = 0;
};

std::vector<std::int64_t> sequential_order(std::int64_t n);
// Fisher-Yates permutation of [0, n) determined by (seed, epoch).
std::vector<std::int64_t> shuffled_order(std::int64_t n, std::uint64_t seed, std::uint64_t epoch = 0);

// Stacks field i of every sample along a new leading axis. Throws CollateError
// on mismatched arity, shape, or dtype.
Sample collate(const std::vector<Sample>& samples);

struct LoaderConfig {
  std::int64_t batch_size = 1;
  bool drop_last = false;
  int num_workers = 0;
  int prefetch_depth = 2;  // batches each worker may run ahead
  std::uint64_t seed = 0;
  bool shuffle = false;
};

struct Batch {
  std::int64_t index = 0;
  std::vector<std::int64_t> indices;
  Sample fields;
};

// Makes a batch produced on `producer` safe to use on `consumer`: the consumer
// stream waits for `ready`, and every field's storage records the consumer as
// a user. No element data moves.
void hand_off(const Batch& batch, const Event& ready, StreamId consumer);

// First stream id handed to loader workers; worker k uses kWorkerStreamBase + k.
inline constexpr int kWorkerStreamBase = 1000;

class DataLoader;

// One pass over the dataset. Batches arrive in sampler order regardless of
// which worker finishes first.
class EpochIterator {
 public:
  ~EpochIterator();
  EpochIterator(const EpochIterator&) = delete;
  EpochIterator& operator=(const EpochIterator&) = delete;

  // Next batch, or nullopt at the end of the epoch. Throws WorkerCrashed if a
  // worker failed while producing this batch.
  std::optional<Batch> next();

 private:
  friend class DataLoader;
  EpochIterator(std::shared_ptr<const Dataset> dataset, LoaderConfig config,
                std::vector<std::vector<std::int64_t>> batches);

  struct Slot {
    std::optional<Batch> batch;
    Event ready;
    std::string error;
  };

  Batch produce(std::int64_t b) const;
  void worker_main(int worker);
  void stop_workers();

  std::shared_ptr<const Dataset> dataset_;
  LoaderConfig config_;
  std::vector<std::vector<std::int64_t>> batches_;
  std::int64_t next_ = 0;

  std::mutex mutex_;
  std::condition_variable produced_cv_;
  std::condition_variable consumed_cv_;
  std::map<std::int64_t, Slot> done_;
  bool stop_ = false;
  std::vector<std::thread> workers_;
};

class DataLoader {
 public:
  DataLoader(std::shared_ptr<const Dataset> dataset, LoaderConfig config);

  std::int64_t num_batches() const;
  // Sample indices of every batch in the given epoch, in delivery order.
  std::vector<std::vector<std::int64_t>> plan(std::uint64_t epoch = 0) const;
  std::unique_ptr<EpochIterator> epoch(std::uint64_t epoch = 0) const;

  const LoaderConfig& config() const { return config_; }

 private:
  std::shared_ptr<const Dataset> dataset_;
  LoaderConfig config_;
};

// Gaussian blobs: `classes` centers on a circle of radius 4 in the first two
// dimensions, unit noise. Samples are (features [d] f32, label i64 scalar).
class BlobsDataset : public Dataset {
 public:
  BlobsDataset(std::int64_t n, std::int64_t dim, std::int64_t classes, std::uint64_t seed);
  std::int64_t size() const override { return n_; }
  Sample get(std::int64_t index) const override;

  std::int64_t dim() const { return dim_; }
  std::int64_t classes() const { return classes_; }

 private:
  std::int64_t n_;
  std::int64_t dim_;
  std::int64_t classes_;
  std::vector<double> features_;
  std::vector<std::int64_t> labels_;
};

// Ten 8x8 digit glyphs scaled to side x side with Gaussian pixel noise.
// Samples are (image [1, side, side] f32, label i64 scalar).
class DigitsDataset : public Dataset {
 public:
  DigitsDataset(std::int64_t n, std::uint64_t seed, std::int64_t side = 28);
  std::int64_t size() const override { return n_; }
  Sample get(std::int64_t index) const override;

  std::int64_t side() const { return side_; }

 private:
  std::int64_t n_;
  std::int64_t side_;
  std::uint64_t seed_;
};

// Parses `blobs:n=N,d=D,classes=C,seed=S` or `digits:n=N,seed=S[,size=P]`.
std::shared_ptr<Dataset> make_dataset(std::string_view descriptor);

}  // namespace microtorch::data
