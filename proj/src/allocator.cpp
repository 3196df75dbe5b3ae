#include "microtorch/allocator.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <new>

#include "microtorch/error.hpp"

namespace microtorch {

namespace {

void spin_for(std::int64_t ns) {
  if (ns <= 0) return;
  const auto until = std::chrono::steady_clock::now() + std::chrono::nanoseconds(ns);
  while (std::chrono::steady_clock::now() < until) {
  }
}

constexpr std::size_t kAlignment = 64;

}  // namespace

void* HostBackend::raw_alloc(std::size_t nbytes) {
  spin_for(options_.latency_ns);
  {
    std::lock_guard lock(mutex_);
    if (options_.capacity_bytes != 0 && outstanding_ + nbytes > options_.capacity_bytes) {
      return nullptr;
    }
    outstanding_ += nbytes;
  }
  void* ptr = ::operator new(nbytes, std::align_val_t{kAlignment}, std::nothrow);
  if (!ptr) {
    std::lock_guard lock(mutex_);
    outstanding_ -= nbytes;
  }
  return ptr;
}

void HostBackend::raw_free(void* ptr, std::size_t nbytes) {
  // A worker cannot wait for its own queue; it only frees while draining.
  if (options_.device && !Executor::on_worker_thread()) options_.device->synchronize();
  spin_for(options_.latency_ns);
  ::operator delete(ptr, std::align_val_t{kAlignment});
  std::lock_guard lock(mutex_);
  outstanding_ -= nbytes;
}

std::size_t HostBackend::outstanding_bytes() const {
  std::lock_guard lock(mutex_);
  return outstanding_;
}

CachingAllocator::CachingAllocator(std::shared_ptr<RawBackend> backend, AllocatorConfig config,
                                   Executor* executor)
    : backend_(std::move(backend)), config_(config), executor_(executor) {
  MT_CHECK(config_.round_quantum > 0, ErrorCode::InvalidArgument, "round quantum must be > 0");
}

CachingAllocator::~CachingAllocator() {
  if (executor_) executor_->synchronize();
  std::lock_guard lock(mutex_);
  for (auto& [id, block] : blocks_) backend_->raw_free(block.ptr, block.rounded);
}

CachingAllocator& CachingAllocator::global() {
  static CachingAllocator* allocator = [] {
    Executor& device = Executor::global();
    return new CachingAllocator(std::make_shared<HostBackend>(HostBackendOptions{0, 0, &device}),
                                AllocatorConfig{}, &device);
  }();
  return *allocator;
}

std::size_t CachingAllocator::round_size(std::size_t nbytes) const {
  const std::size_t q = config_.round_quantum;
  const std::size_t n = std::max<std::size_t>(nbytes, 1);
  return (n + q - 1) / q * q;
}

void* CachingAllocator::raw_alloc_with_retry(std::size_t rounded,
                                             std::unique_lock<std::mutex>& lock) {
  void* ptr = backend_->raw_alloc(rounded);
  if (ptr) return ptr;
  // Out of memory: hand every cached block back and try once more.
  std::vector<std::pair<void*, std::size_t>> released;
  release_cached_locked(released);
  lock.unlock();
  for (auto [p, n] : released) backend_->raw_free(p, n);
  ptr = backend_->raw_alloc(rounded);
  lock.lock();
  if (!ptr) {
    fail(ErrorCode::OutOfMemory, "backend could not provide " + std::to_string(rounded) +
                                     " bytes after releasing the cache");
  }
  return ptr;
}

BlockRef CachingAllocator::allocate(std::size_t nbytes, StreamId stream) {
  const std::size_t rounded = round_size(nbytes);
  std::unique_lock lock(mutex_);
  process_pending_locked();

  if (config_.caching) {
    auto pool_it = pools_.find(stream.value);
    if (pool_it != pools_.end()) {
      auto list_it = pool_it->second.find(rounded);
      if (list_it != pool_it->second.end() && !list_it->second.empty()) {
        const std::uint64_t id = list_it->second.back();
        list_it->second.pop_back();
        Block& block = blocks_.at(id);
        block.state = BlockState::InUse;
        block.requested = nbytes;
        block.extra_use_streams.clear();
        ++stats_.cache_hit_count;
        stats_.bytes_cached -= rounded;
        stats_.bytes_in_use += rounded;
        stats_.peak_bytes_in_use = std::max(stats_.peak_bytes_in_use, stats_.bytes_in_use);
        return {id, block.ptr, nbytes, rounded, stream};
      }
    }
  }

  void* ptr = raw_alloc_with_retry(rounded, lock);
  const std::uint64_t id = next_id_++;
  Block& block = blocks_[id];
  block = Block{id, ptr, nbytes, rounded, stream, {}, BlockState::InUse};
  ++stats_.raw_alloc_count;
  stats_.bytes_in_use += rounded;
  stats_.peak_bytes_in_use = std::max(stats_.peak_bytes_in_use, stats_.bytes_in_use);
  return {id, ptr, nbytes, rounded, stream};
}

void CachingAllocator::pool_locked(Block& block) {
  block.state = BlockState::Cached;
  block.extra_use_streams.clear();
  pools_[block.home.value][block.rounded].push_back(block.id);
  stats_.bytes_in_use -= block.rounded;
  stats_.bytes_cached += block.rounded;
}

void CachingAllocator::free(const BlockRef& ref) {
  std::unique_lock lock(mutex_);
  auto it = blocks_.find(ref.id);
  if (it == blocks_.end() || it->second.state != BlockState::InUse ||
      std::any_of(pending_.begin(), pending_.end(),
                  [&](const PendingFree& p) { return p.id == ref.id; })) {
    fail(ErrorCode::DoubleFree, "block " + std::to_string(ref.id) + " is not in use");
  }
  Block& block = it->second;

  if (!config_.caching) {
    void* ptr = block.ptr;
    const std::size_t rounded = block.rounded;
    stats_.bytes_in_use -= rounded;
    ++stats_.raw_free_count;
    blocks_.erase(it);
    lock.unlock();
    backend_->raw_free(ptr, rounded);
    return;
  }

  if (block.extra_use_streams.empty() || executor_ == nullptr) {
    pool_locked(block);
  } else {
    PendingFree pending{block.id, {}};
    for (StreamId s : block.extra_use_streams) {
      pending.events.push_back(executor_->record_event(s));
    }
    pending_.push_back(std::move(pending));
  }
  process_pending_locked();
}

void CachingAllocator::process_pending_locked() {
  auto done = [&](PendingFree& p) {
    if (!std::all_of(p.events.begin(), p.events.end(), [](const Event& e) { return e.query(); })) {
      return false;
    }
    pool_locked(blocks_.at(p.id));
    return true;
  };
  pending_.erase(std::remove_if(pending_.begin(), pending_.end(), done), pending_.end());
}

void CachingAllocator::record_stream(const BlockRef& ref, StreamId stream) {
  std::lock_guard lock(mutex_);
  auto it = blocks_.find(ref.id);
  if (it == blocks_.end() || it->second.state != BlockState::InUse) return;
  if (stream != it->second.home) it->second.extra_use_streams.insert(stream);
}

std::size_t CachingAllocator::release_cached_locked(
    std::vector<std::pair<void*, std::size_t>>& out) {
  std::size_t released = 0;
  for (auto& [stream, pool] : pools_) {
    for (auto& [size, ids] : pool) {
      for (std::uint64_t id : ids) {
        auto it = blocks_.find(id);
        out.emplace_back(it->second.ptr, it->second.rounded);
        released += it->second.rounded;
        blocks_.erase(it);
        ++stats_.raw_free_count;
      }
    }
  }
  pools_.clear();
  stats_.bytes_cached -= released;
  return released;
}

std::size_t CachingAllocator::empty_cache() {
  std::vector<std::pair<void*, std::size_t>> released;
  std::size_t total = 0;
  {
    std::lock_guard lock(mutex_);
    process_pending_locked();
    total = release_cached_locked(released);
  }
  for (auto [ptr, n] : released) backend_->raw_free(ptr, n);
  return total;
}

AllocStats CachingAllocator::stats() {
  std::lock_guard lock(mutex_);
  process_pending_locked();
  return stats_;
}

void CachingAllocator::reset_peak() {
  std::lock_guard lock(mutex_);
  stats_.peak_bytes_in_use = stats_.bytes_in_use;
}

std::size_t CachingAllocator::pending_free_count() {
  std::lock_guard lock(mutex_);
  process_pending_locked();
  return pending_.size();
}

}  // namespace microtorch
