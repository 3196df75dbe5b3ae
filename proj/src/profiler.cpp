#include "microtorch/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "microtorch/error.hpp"

namespace microtorch {

namespace {

std::int64_t steady_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

Tracer& Tracer::global() {
  static Tracer* tracer = new Tracer();
  return *tracer;
}

Tracer::Tracer() : epoch_ns_(steady_ns()) {}

void Tracer::enable(bool on) { enabled_.store(on); }

std::int64_t Tracer::now_us() const { return (steady_ns() - epoch_ns_) / 1000; }

Tracer::Buffer& Tracer::local_buffer() {
  thread_local std::shared_ptr<Buffer> buffer;
  if (!buffer) {
    buffer = std::make_shared<Buffer>();
    std::lock_guard lock(registry_mutex_);
    buffers_.push_back(buffer);
  }
  return *buffer;
}

void Tracer::record(TraceEvent event) {
  Buffer& buffer = local_buffer();
  std::lock_guard lock(buffer.mutex);
  buffer.events.push_back(std::move(event));
}

std::vector<TraceEvent> Tracer::flush() {
  std::vector<TraceEvent> merged;
  {
    std::lock_guard lock(registry_mutex_);
    for (auto& buffer : buffers_) {
      std::lock_guard inner(buffer->mutex);
      std::move(buffer->events.begin(), buffer->events.end(), std::back_inserter(merged));
      buffer->events.clear();
    }
  }
  std::stable_sort(merged.begin(), merged.end(), [](const TraceEvent& a, const TraceEvent& b) {
    return a.ts_us < b.ts_us;
  });
  return merged;
}

std::string lane_name(int lane) {
  if (lane == kHostEnqueueLane) return "HOST_ENQUEUE";
  return "STREAM(" + std::to_string(lane) + ")";
}

namespace {

// Chrome's tid must be non-negative: host is 0, stream k is k + 1.
int lane_tid(int lane) { return lane + 1; }

}  // namespace

std::string to_chrome_trace_json(const std::vector<TraceEvent>& events) {
  nlohmann::json out;
  auto& list = out["traceEvents"] = nlohmann::json::array();
  std::set<int> lanes;
  for (const auto& e : events) lanes.insert(e.lane);
  for (int lane : lanes) {
    list.push_back({{"name", "thread_name"},
                    {"ph", "M"},
                    {"pid", 1},
                    {"tid", lane_tid(lane)},
                    {"args", {{"name", lane_name(lane)}}}});
  }
  for (const auto& e : events) {
    list.push_back({{"name", e.name},
                    {"cat", e.lane == kHostEnqueueLane ? "enqueue" : "execute"},
                    {"ph", "X"},
                    {"ts", e.ts_us},
                    {"dur", e.dur_us},
                    {"pid", 1},
                    {"tid", lane_tid(e.lane)},
                    {"args", {{"correlation_id", e.correlation_id}, {"lane", lane_name(e.lane)}}}});
  }
  return out.dump();
}

void write_chrome_trace(const std::filesystem::path& path, const std::vector<TraceEvent>& events) {
  std::ofstream file(path);
  if (!file) fail(ErrorCode::IoError, "cannot open trace file " + path.string());
  file << to_chrome_trace_json(events) << '\n';
}

}  // namespace microtorch
