#pragma once

#include <atomic>
#include <compare>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

namespace microtorch {

// Identifies a FIFO work queue. Stream 0 is the default stream.
struct StreamId {
  int value = 0;
  auto operator<=>(const StreamId&) const = default;
};

inline constexpr StreamId kDefaultStream{0};

enum class ExecMode { Sync, Async };

std::string_view to_string(ExecMode mode);
ExecMode exec_mode_from_string(std::string_view text);

using Kernel = std::function<void()>;

namespace detail {
struct StreamState;
}

// Marks a point in a stream's queue. Completion means every item enqueued on
// that stream before the record point has finished executing.
class Event {
 public:
  Event() = default;  // an already-completed event

  bool query() const;
  void wait() const;
  StreamId stream() const;

 private:
  friend class Executor;
  Event(std::shared_ptr<detail::StreamState> stream, std::uint64_t target)
      : stream_(std::move(stream)), target_(target) {}

  std::shared_ptr<detail::StreamState> stream_;
  std::uint64_t target_ = 0;
};

// Virtual-device executor. In Async mode each stream owns a worker thread
// that drains its queue in enqueue order; the host returns from enqueue as
// soon as the item is queued. In Sync mode kernels run inline.
//
// Kernel failures are sticky: they are reported as DeviceError by the next
// synchronize on the failing stream.
class Executor {
 public:
  explicit Executor(ExecMode mode = ExecMode::Async);
  ~Executor();
  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  // Process-wide executor used by tensor ops. Its initial mode is Async
  // unless MICROTORCH_DEFAULT_MODE=sync is set.
  static Executor& global();

  void enqueue(StreamId stream, std::string_view label, Kernel kernel);

  void synchronize();
  void synchronize(StreamId stream);

  Event record_event(StreamId stream);
  void wait_event(StreamId stream, const Event& event);

  // Throws BusyExecutor unless every stream is idle.
  void set_mode(ExecMode mode);
  ExecMode mode() const { return mode_.load(); }

  // Every kernel occupies at least this long on its stream (0 disables).
  void set_sim_kernel_us(std::int64_t us) { sim_kernel_us_.store(us); }
  std::int64_t sim_kernel_us() const { return sim_kernel_us_.load(); }

  bool idle() const;
  void shutdown();

  std::uint64_t executed_count() const { return executed_.load(); }

  // True on threads owned by any executor (the simulated device).
  static bool on_worker_thread();

 private:
  std::shared_ptr<detail::StreamState> stream_state(StreamId stream, bool start_worker);
  void run_item(detail::StreamState& stream, const std::string& label, const Kernel& kernel,
                std::uint64_t correlation_id);
  void worker_loop(std::shared_ptr<detail::StreamState> stream);

  std::atomic<ExecMode> mode_;
  std::atomic<std::int64_t> sim_kernel_us_{0};
  std::atomic<std::uint64_t> executed_{0};
  std::atomic<bool> stopped_{false};
  mutable std::mutex streams_mutex_;
  std::map<StreamId, std::shared_ptr<detail::StreamState>> streams_;
};

// Stream that tensor ops on this thread enqueue onto.
StreamId current_stream();
void set_current_stream(StreamId stream);

class StreamGuard {
 public:
  explicit StreamGuard(StreamId stream) : previous_(current_stream()) {
    set_current_stream(stream);
  }
  ~StreamGuard() { set_current_stream(previous_); }
  StreamGuard(const StreamGuard&) = delete;
  StreamGuard& operator=(const StreamGuard&) = delete;

 private:
  StreamId previous_;
};

}  // namespace microtorch
