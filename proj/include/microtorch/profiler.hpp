#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace microtorch {

// Lane -1 is the host enqueue lane; lane k >= 0 is the execution lane of
// stream k.
inline constexpr int kHostEnqueueLane = -1;

struct TraceEvent {
  std::string name;
  int lane = kHostEnqueueLane;
  std::int64_t ts_us = 0;
  std::int64_t dur_us = 0;
  std::uint64_t correlation_id = 0;
};

// Collects enqueue/execute intervals from every thread. Each thread appends to
// its own buffer; buffers are merged and sorted by timestamp on flush.
class Tracer {
 public:
  static Tracer& global();

  void enable(bool on);
  bool enabled() const { return enabled_.load(std::memory_order_relaxed); }

  std::uint64_t next_correlation_id() { return next_id_.fetch_add(1) + 1; }
  std::int64_t now_us() const;

  void record(TraceEvent event);

  // Drains all buffers.
  std::vector<TraceEvent> flush();

  struct Buffer {
    std::mutex mutex;
    std::vector<TraceEvent> events;
  };

 private:
  Tracer();
  Buffer& local_buffer();

  std::atomic<bool> enabled_{false};
  std::atomic<std::uint64_t> next_id_{0};
  std::mutex registry_mutex_;
  std::vector<std::shared_ptr<Buffer>> buffers_;
  std::int64_t epoch_ns_ = 0;
};

std::string lane_name(int lane);

// Chrome trace-event JSON ({"traceEvents":[...]}) with one complete ("X")
// event per interval plus thread-name metadata so lanes are labelled.
std::string to_chrome_trace_json(const std::vector<TraceEvent>& events);
void write_chrome_trace(const std::filesystem::path& path,
                        const std::vector<TraceEvent>& events);

}  // namespace microtorch
