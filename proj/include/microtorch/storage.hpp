#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>

#include "microtorch/allocator.hpp"
#include "microtorch/executor.hpp"

namespace microtorch {

// Caller-owned memory exchanged without copying. `release_callback` runs
// once, when the last user of the wrapped memory goes away; whoever ends up
// holding the buffer is responsible for calling release().
class ExternalBuffer {
 public:
  ExternalBuffer() = default;
  ExternalBuffer(void* data, std::size_t nbytes, std::function<void()> release_callback)
      : data_(data), nbytes_(nbytes), release_(std::move(release_callback)) {}
  ExternalBuffer(ExternalBuffer&& other) noexcept { *this = std::move(other); }
  ExternalBuffer& operator=(ExternalBuffer&& other) noexcept {
    data_ = other.data_;
    nbytes_ = other.nbytes_;
    release_ = std::move(other.release_);
    other.release_ = nullptr;
    other.data_ = nullptr;
    other.nbytes_ = 0;
    return *this;
  }
  ExternalBuffer(const ExternalBuffer&) = delete;
  ExternalBuffer& operator=(const ExternalBuffer&) = delete;

  void* data() const { return data_; }
  std::size_t nbytes() const { return nbytes_; }

  void release() {
    if (release_) std::exchange(release_, nullptr)();
  }
  // Hands the callback to a new owner without invoking it.
  std::function<void()> take_release() { return std::exchange(release_, nullptr); }

 private:
  void* data_ = nullptr;
  std::size_t nbytes_ = 0;
  std::function<void()> release_;
};

// A byte buffer shared by every view onto it. Either owns a block from the
// caching allocator or wraps an ExternalBuffer. Destroying the last handle
// returns the block to the allocator within the same call.
class StorageImpl {
 public:
  static std::shared_ptr<StorageImpl> allocate(std::size_t nbytes, StreamId stream);
  static std::shared_ptr<StorageImpl> wrap(ExternalBuffer buffer);

  ~StorageImpl();
  StorageImpl(const StorageImpl&) = delete;
  StorageImpl& operator=(const StorageImpl&) = delete;

  std::byte* data() const { return data_; }
  std::size_t nbytes() const { return nbytes_; }
  bool is_external() const { return !block_; }
  const BlockRef& block() const { return block_; }

  std::uint64_t version() const { return version_.load(std::memory_order_acquire); }
  void bump_version() { version_.fetch_add(1, std::memory_order_acq_rel); }

  StreamId stream() const { return stream_; }
  // Notes that a kernel on `stream` touches this storage. Uses on a stream
  // other than the allocation stream are reported to the allocator so the
  // block is not recycled before that stream catches up.
  void record_use(StreamId stream);

  // Set once a differentiable view aliases this storage; in-place autograd
  // is refused on such storages.
  bool differentiable_alias() const { return alias_.load(std::memory_order_acquire); }
  void mark_differentiable_alias() { alias_.store(true, std::memory_order_release); }

 private:
  StorageImpl() = default;

  std::byte* data_ = nullptr;
  std::size_t nbytes_ = 0;
  BlockRef block_;
  std::function<void()> release_;
  StreamId stream_{};
  std::atomic<std::uint64_t> version_{0};
  std::atomic<bool> alias_{false};
};

using Storage = std::shared_ptr<StorageImpl>;

}  // namespace microtorch
