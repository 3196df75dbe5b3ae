#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "microtorch/executor.hpp"

namespace microtorch {

// Source of raw memory for the caching allocator. The default backend models
// a device allocator: raw_free first waits for all queued work on all streams
// (the hazard that makes uncached allocation expensive).
class RawBackend {
 public:
  virtual ~RawBackend() = default;
  // Returns nullptr when the backend is exhausted.
  virtual void* raw_alloc(std::size_t nbytes) = 0;
  virtual void raw_free(void* ptr, std::size_t nbytes) = 0;
};

struct HostBackendOptions {
  // Busy-wait injected into every raw_alloc and raw_free.
  std::int64_t latency_ns = 0;
  // raw_alloc fails once this many bytes are outstanding (0 = unlimited).
  std::size_t capacity_bytes = 0;
  // Executor whose streams raw_free drains first (nullptr = none).
  Executor* device = nullptr;
};

class HostBackend final : public RawBackend {
 public:
  explicit HostBackend(HostBackendOptions options = {}) : options_(options) {}

  void* raw_alloc(std::size_t nbytes) override;
  void raw_free(void* ptr, std::size_t nbytes) override;

  std::size_t outstanding_bytes() const;

 private:
  HostBackendOptions options_;
  mutable std::mutex mutex_;
  std::size_t outstanding_ = 0;
};

enum class BlockState { InUse, Cached };

// Handle to an allocation. `id` is what the allocator tracks; the pointer is
// valid while the block is in use.
struct BlockRef {
  std::uint64_t id = 0;
  void* ptr = nullptr;
  std::size_t requested_bytes = 0;
  std::size_t rounded_bytes = 0;
  StreamId home_stream{};

  explicit operator bool() const { return id != 0; }
};

struct AllocStats {
  std::uint64_t raw_alloc_count = 0;
  std::uint64_t raw_free_count = 0;
  std::uint64_t cache_hit_count = 0;
  std::uint64_t bytes_in_use = 0;
  std::uint64_t bytes_cached = 0;
  std::uint64_t peak_bytes_in_use = 0;
};

struct AllocatorConfig {
  std::size_t round_quantum = 512;
  // false: every allocate/free goes straight to the backend (baseline mode).
  bool caching = true;
};

// Size-class caching allocator with one free pool per stream.
//
// Sizes are rounded up to a multiple of the quantum and matched exactly; no
// splitting or coalescing. A freed block goes back to its home stream's pool
// at once, even if kernels on that stream still use it: later users on the
// same stream are ordered after those kernels by stream FIFO order. Blocks
// that were also used on other streams (record_stream) are held until events
// recorded on those streams complete.
class CachingAllocator {
 public:
  CachingAllocator(std::shared_ptr<RawBackend> backend, AllocatorConfig config = {},
                   Executor* executor = nullptr);
  ~CachingAllocator();
  CachingAllocator(const CachingAllocator&) = delete;
  CachingAllocator& operator=(const CachingAllocator&) = delete;

  // Allocator used for all tensor storage; backed by HostBackend draining
  // Executor::global() on raw_free.
  static CachingAllocator& global();

  std::size_t round_size(std::size_t nbytes) const;

  BlockRef allocate(std::size_t nbytes, StreamId stream);
  void free(const BlockRef& block);
  void record_stream(const BlockRef& block, StreamId stream);

  // Releases every cached block to the backend; returns the bytes released.
  std::size_t empty_cache();

  AllocStats stats();
  void reset_peak();

  const AllocatorConfig& config() const { return config_; }
  // Blocks waiting on cross-stream events before they can be pooled.
  std::size_t pending_free_count();

 private:
  struct Block {
    std::uint64_t id = 0;
    void* ptr = nullptr;
    std::size_t requested = 0;
    std::size_t rounded = 0;
    StreamId home{};
    std::set<StreamId> extra_use_streams;
    BlockState state = BlockState::InUse;
  };
  struct PendingFree {
    std::uint64_t id;
    std::vector<Event> events;
  };
  using Pool = std::unordered_map<std::size_t, std::vector<std::uint64_t>>;

  void process_pending_locked();
  void pool_locked(Block& block);
  std::size_t release_cached_locked(std::vector<std::pair<void*, std::size_t>>& out);
  void* raw_alloc_with_retry(std::size_t rounded, std::unique_lock<std::mutex>& lock);

  std::shared_ptr<RawBackend> backend_;
  AllocatorConfig config_;
  Executor* executor_;
  std::mutex mutex_;
  std::uint64_t next_id_ = 1;
  std::unordered_map<std::uint64_t, Block> blocks_;
  std::unordered_map<int, Pool> pools_;
  std::vector<PendingFree> pending_;
  AllocStats stats_;
};

}  // namespace microtorch
