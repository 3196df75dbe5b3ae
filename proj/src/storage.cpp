#include "microtorch/storage.hpp"

namespace microtorch {

std::shared_ptr<StorageImpl> StorageImpl::allocate(std::size_t nbytes, StreamId stream) {
  std::shared_ptr<StorageImpl> storage(new StorageImpl());
  storage->block_ = CachingAllocator::global().allocate(nbytes, stream);
  storage->data_ = static_cast<std::byte*>(storage->block_.ptr);
  storage->nbytes_ = nbytes;
  storage->stream_ = stream;
  return storage;
}

std::shared_ptr<StorageImpl> StorageImpl::wrap(ExternalBuffer buffer) {
  std::shared_ptr<StorageImpl> storage(new StorageImpl());
  storage->data_ = static_cast<std::byte*>(buffer.data());
  storage->nbytes_ = buffer.nbytes();
  storage->release_ = buffer.take_release();
  storage->stream_ = current_stream();
  return storage;
}

StorageImpl::~StorageImpl() {
  if (block_) {
    CachingAllocator::global().free(block_);
  } else if (release_) {
    // Caller-owned memory may be reused the moment we release it, so queued
    // kernels that still reference it must finish first.
    if (!Executor::on_worker_thread()) Executor::global().synchronize();
    release_();
  }
}

void StorageImpl::record_use(StreamId stream) {
  if (block_ && stream != stream_) CachingAllocator::global().record_stream(block_, stream);
}

}  // namespace microtorch
