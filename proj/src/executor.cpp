#include "microtorch/executor.hpp"

#include <chrono>
#include <cstdlib>
#include <deque>
#include <exception>
#include <thread>
#include <vector>

#include "microtorch/error.hpp"
#include "microtorch/profiler.hpp"

namespace microtorch {

namespace detail {

struct WorkItem {
  std::string label;
  Kernel kernel;
  std::uint64_t correlation_id = 0;
};

struct StreamState {
  explicit StreamState(StreamId id) : id(id) {}

  StreamId id;
  mutable std::mutex mutex;
  std::condition_variable work_cv;
  mutable std::condition_variable done_cv;
  std::deque<WorkItem> queue;
  std::uint64_t enqueued = 0;
  std::uint64_t completed = 0;
  bool stop = false;
  std::thread worker;
  std::string error;
};

}  // namespace detail

namespace {

thread_local bool tl_worker_thread = false;
thread_local StreamId tl_current_stream = kDefaultStream;

}  // namespace

std::string_view to_string(ExecMode mode) { return mode == ExecMode::Sync ? "sync" : "async"; }

ExecMode exec_mode_from_string(std::string_view text) {
  if (text == "sync") return ExecMode::Sync;
  if (text == "async") return ExecMode::Async;
  fail(ErrorCode::InvalidArgument, "unknown execution mode '" + std::string(text) + "'");
}

StreamId current_stream() { return tl_current_stream; }
void set_current_stream(StreamId stream) { tl_current_stream = stream; }

bool Event::query() const {
  if (!stream_) return true;
  std::lock_guard lock(stream_->mutex);
  return stream_->completed >= target_;
}

void Event::wait() const {
  if (!stream_) return;
  std::unique_lock lock(stream_->mutex);
  stream_->done_cv.wait(lock, [&] { return stream_->completed >= target_; });
}

StreamId Event::stream() const { return stream_ ? stream_->id : kDefaultStream; }

Executor::Executor(ExecMode mode) : mode_(mode) {}

Executor::~Executor() { shutdown(); }

Executor& Executor::global() {
  static Executor* executor = [] {
    ExecMode mode = ExecMode::Async;
    if (const char* env = std::getenv("MICROTORCH_DEFAULT_MODE")) {
      mode = exec_mode_from_string(env);
    }
    return new Executor(mode);
  }();
  return *executor;
}

bool Executor::on_worker_thread() { return tl_worker_thread; }

std::shared_ptr<detail::StreamState> Executor::stream_state(StreamId stream, bool start_worker) {
  std::lock_guard lock(streams_mutex_);
  auto& slot = streams_[stream];
  if (!slot) slot = std::make_shared<detail::StreamState>(stream);
  if (start_worker && !slot->worker.joinable()) {
    slot->worker = std::thread([this, state = slot] { worker_loop(state); });
  }
  return slot;
}

void Executor::run_item(detail::StreamState& stream, const std::string& label,
                        const Kernel& kernel, std::uint64_t correlation_id) {
  Tracer& tracer = Tracer::global();
  const bool tracing = tracer.enabled();
  const auto start = std::chrono::steady_clock::now();
  const std::int64_t ts = tracing ? tracer.now_us() : 0;
  try {
    kernel();
  } catch (const std::exception& e) {
    std::lock_guard lock(stream.mutex);
    if (stream.error.empty()) stream.error = label + ": " + e.what();
  }
  if (const auto sim = sim_kernel_us_.load(); sim > 0) {
    std::this_thread::sleep_until(start + std::chrono::microseconds(sim));
  }
  if (tracing) {
    tracer.record({label, stream.id.value, ts, tracer.now_us() - ts, correlation_id});
  }
  executed_.fetch_add(1, std::memory_order_relaxed);
}

void Executor::worker_loop(std::shared_ptr<detail::StreamState> stream) {
  tl_worker_thread = true;
  tl_current_stream = stream->id;
  std::unique_lock lock(stream->mutex);
  for (;;) {
    stream->work_cv.wait(lock, [&] { return stream->stop || !stream->queue.empty(); });
    if (stream->queue.empty()) return;  // stop requested and drained
    detail::WorkItem item = std::move(stream->queue.front());
    stream->queue.pop_front();
    lock.unlock();
    run_item(*stream, item.label, item.kernel, item.correlation_id);
    item = {};  // release captures before signalling completion
    lock.lock();
    ++stream->completed;
    stream->done_cv.notify_all();
  }
}

void Executor::enqueue(StreamId stream, std::string_view label, Kernel kernel) {
  if (stopped_.load()) fail(ErrorCode::ShutdownError, "enqueue on a stopped executor");
  Tracer& tracer = Tracer::global();
  const bool tracing = tracer.enabled();
  const std::uint64_t correlation = tracing ? tracer.next_correlation_id() : 0;
  const std::int64_t ts = tracing ? tracer.now_us() : 0;

  if (mode_.load() == ExecMode::Sync) {
    auto state = stream_state(stream, false);
    {
      std::lock_guard lock(state->mutex);
      ++state->enqueued;
    }
    run_item(*state, std::string(label), kernel, correlation);
    {
      std::lock_guard lock(state->mutex);
      ++state->completed;
      state->done_cv.notify_all();
      if (!state->error.empty()) {
        std::string message = std::move(state->error);
        state->error.clear();
        fail(ErrorCode::DeviceError, message);
      }
    }
  } else {
    auto state = stream_state(stream, true);
    {
      std::lock_guard lock(state->mutex);
      state->queue.push_back({std::string(label), std::move(kernel), correlation});
      ++state->enqueued;
    }
    state->work_cv.notify_one();
  }
  if (tracing) {
    tracer.record({std::string(label), kHostEnqueueLane, ts, tracer.now_us() - ts, correlation});
  }
}

void Executor::synchronize(StreamId stream) {
  std::shared_ptr<detail::StreamState> state;
  {
    std::lock_guard lock(streams_mutex_);
    auto it = streams_.find(stream);
    if (it == streams_.end()) return;
    state = it->second;
  }
  std::unique_lock lock(state->mutex);
  state->done_cv.wait(lock, [&] { return state->completed >= state->enqueued; });
  if (!state->error.empty()) {
    std::string message = std::move(state->error);
    state->error.clear();
    fail(ErrorCode::DeviceError, message);
  }
}

void Executor::synchronize() {
  std::vector<StreamId> ids;
  {
    std::lock_guard lock(streams_mutex_);
    for (const auto& [id, state] : streams_) ids.push_back(id);
  }
  for (StreamId id : ids) synchronize(id);
}

Event Executor::record_event(StreamId stream) {
  auto state = stream_state(stream, false);
  std::lock_guard lock(state->mutex);
  if (state->completed >= state->enqueued) return Event{};
  return Event(state, state->enqueued);
}

void Executor::wait_event(StreamId stream, const Event& event) {
  if (event.query()) return;
  if (event.stream() == stream) return;  // FIFO already orders it
  if (mode_.load() == ExecMode::Sync) {
    event.wait();
    return;
  }
  enqueue(stream, "wait_event", [event] { event.wait(); });
}

bool Executor::idle() const {
  std::lock_guard lock(streams_mutex_);
  for (const auto& [id, state] : streams_) {
    std::lock_guard inner(state->mutex);
    if (state->completed < state->enqueued) return false;
  }
  return true;
}

void Executor::set_mode(ExecMode mode) {
  if (!idle()) fail(ErrorCode::BusyExecutor, "set_mode while work is pending");
  mode_.store(mode);
}

void Executor::shutdown() {
  if (stopped_.exchange(true)) return;
  std::vector<std::shared_ptr<detail::StreamState>> states;
  {
    std::lock_guard lock(streams_mutex_);
    for (auto& [id, state] : streams_) states.push_back(state);
  }
  for (auto& state : states) {
    {
      std::lock_guard lock(state->mutex);
      state->stop = true;
    }
    state->work_cv.notify_all();
    if (state->worker.joinable()) state->worker.join();
  }
}

}  // namespace microtorch
