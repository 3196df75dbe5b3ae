#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <map>
#include <random>
#include <thread>

#include "microtorch/allocator.hpp"
#include "microtorch/error.hpp"
#include "microtorch/ops.hpp"
#include "microtorch/random.hpp"
#include "test_support.hpp"

using namespace microtorch;

namespace {

constexpr StreamId s0{0};
constexpr StreamId s1{1};

struct Fixture {
  Executor device{ExecMode::Async};
  std::shared_ptr<HostBackend> backend;
  std::unique_ptr<CachingAllocator> alloc;

  explicit Fixture(HostBackendOptions options = {}, AllocatorConfig config = {}) {
    options.device = &device;
    backend = std::make_shared<HostBackend>(options);
    alloc = std::make_unique<CachingAllocator>(backend, config, &device);
  }
  ~Fixture() {
    device.synchronize();
    alloc.reset();
  }

  void expect_conserved() {
    const AllocStats s = alloc->stats();
    EXPECT_EQ(s.bytes_in_use + s.bytes_cached, backend->outstanding_bytes());
  }
};

void spin_for(std::chrono::microseconds d) {
  const auto until = std::chrono::steady_clock::now() + d;
  while (std::chrono::steady_clock::now() < until) {
  }
}

}  // namespace

TEST(Allocator, RoundSizeExamples) {
  Fixture f;
  EXPECT_EQ(f.alloc->round_size(1), 512u);
  EXPECT_EQ(f.alloc->round_size(512), 512u);
  EXPECT_EQ(f.alloc->round_size(1000), 1024u);
  EXPECT_EQ(f.alloc->round_size(0), 512u);
}

TEST(Allocator, RoundSizeIsSmallestMultiple) {
  Fixture f({}, AllocatorConfig{.round_quantum = 96});
  for (std::size_t n = 0; n < 2000; ++n) {
    const std::size_t r = f.alloc->round_size(n);
    EXPECT_EQ(r % 96, 0u);
    EXPECT_GE(r, std::max<std::size_t>(n, 1));
    EXPECT_LT(r - 96, std::max<std::size_t>(n, 1));
  }
}

TEST(Allocator, FreshStatsAreZero) {
  Fixture f;
  const AllocStats s = f.alloc->stats();
  EXPECT_EQ(s.raw_alloc_count, 0u);
  EXPECT_EQ(s.raw_free_count, 0u);
  EXPECT_EQ(s.cache_hit_count, 0u);
  EXPECT_EQ(s.bytes_in_use, 0u);
  EXPECT_EQ(s.bytes_cached, 0u);
  EXPECT_EQ(s.peak_bytes_in_use, 0u);
}

TEST(Allocator, AllocateFreeCachesRoundedBlock) {
  Fixture f;
  BlockRef b = f.alloc->allocate(100, s0);
  EXPECT_EQ(b.rounded_bytes, 512u);
  EXPECT_EQ(b.home_stream, s0);
  EXPECT_EQ(f.alloc->stats().raw_alloc_count, 1u);
  EXPECT_EQ(f.alloc->stats().cache_hit_count, 0u);
  f.alloc->free(b);
  const AllocStats s = f.alloc->stats();
  EXPECT_EQ(s.raw_alloc_count, 1u);
  EXPECT_EQ(s.bytes_cached, 512u);
  EXPECT_EQ(s.bytes_in_use, 0u);
  f.expect_conserved();
}

TEST(Allocator, SameStreamHitOtherStreamMiss) {
  Fixture f;
  BlockRef a = f.alloc->allocate(700, s0);
  f.alloc->free(a);
  BlockRef b = f.alloc->allocate(1000, s0);  // same rounded size
  EXPECT_EQ(b.ptr, a.ptr);
  EXPECT_EQ(f.alloc->stats().cache_hit_count, 1u);
  EXPECT_EQ(f.alloc->stats().raw_alloc_count, 1u);
  f.alloc->free(b);

  BlockRef c = f.alloc->allocate(1000, s1);
  EXPECT_NE(c.ptr, a.ptr);
  EXPECT_EQ(f.alloc->stats().raw_alloc_count, 2u);
  EXPECT_EQ(f.alloc->stats().cache_hit_count, 1u);
  f.alloc->free(c);
}

TEST(Allocator, DifferentRoundedSizeDoesNotHit) {
  Fixture f;
  f.alloc->free(f.alloc->allocate(2048, s0));
  BlockRef b = f.alloc->allocate(100, s0);
  EXPECT_EQ(f.alloc->stats().raw_alloc_count, 2u);
  EXPECT_EQ(f.alloc->stats().cache_hit_count, 0u);
  f.alloc->free(b);
}

TEST(Allocator, LifoReuseWithinSizeClass) {
  Fixture f;
  BlockRef a = f.alloc->allocate(512, s0);
  BlockRef b = f.alloc->allocate(512, s0);
  f.alloc->free(a);
  f.alloc->free(b);
  EXPECT_EQ(f.alloc->allocate(512, s0).ptr, b.ptr);
  EXPECT_EQ(f.alloc->allocate(512, s0).ptr, a.ptr);
}

TEST(Allocator, DoubleFree) {
  Fixture f;
  BlockRef b = f.alloc->allocate(64, s0);
  f.alloc->free(b);
  EXPECT_EQ(mt_test::error_code_of([&] { f.alloc->free(b); }), ErrorCode::DoubleFree);
  BlockRef never{};
  never.id = 987654;
  EXPECT_EQ(mt_test::error_code_of([&] { f.alloc->free(never); }), ErrorCode::DoubleFree);
}

TEST(Allocator, DoubleFreeWhilePending) {
  Fixture f;
  BlockRef b = f.alloc->allocate(64, s0);
  std::atomic<bool> go{false};
  f.device.enqueue(s1, "hold", [&] { while (!go.load()) std::this_thread::yield(); });
  f.alloc->record_stream(b, s1);
  f.alloc->free(b);
  EXPECT_EQ(mt_test::error_code_of([&] { f.alloc->free(b); }), ErrorCode::DoubleFree);
  go = true;
  f.device.synchronize();
}

TEST(Allocator, RecordStreamOnHomeIsNoop) {
  Fixture f;
  BlockRef b = f.alloc->allocate(64, s0);
  std::atomic<bool> go{false};
  f.device.enqueue(s0, "hold", [&] { while (!go.load()) std::this_thread::yield(); });
  f.alloc->record_stream(b, s0);
  f.alloc->free(b);
  EXPECT_EQ(f.alloc->pending_free_count(), 0u);
  EXPECT_EQ(f.alloc->stats().bytes_cached, 512u);
  go = true;
  f.device.synchronize();
}

TEST(Allocator, CrossStreamFreeIsDeferredUntilEvent) {
  Fixture f;
  BlockRef b = f.alloc->allocate(64, s0);
  std::atomic<bool> go{false};
  f.device.enqueue(s1, "hold", [&] { while (!go.load()) std::this_thread::yield(); });
  f.alloc->record_stream(b, s1);
  f.alloc->free(b);
  EXPECT_EQ(f.alloc->pending_free_count(), 1u);

  BlockRef other = f.alloc->allocate(64, s0);
  EXPECT_NE(other.ptr, b.ptr);
  EXPECT_EQ(f.alloc->stats().cache_hit_count, 0u);

  go = true;
  f.device.synchronize(s1);
  EXPECT_EQ(f.alloc->pending_free_count(), 0u);
  BlockRef again = f.alloc->allocate(64, s0);
  EXPECT_EQ(again.ptr, b.ptr);
  EXPECT_EQ(f.alloc->stats().cache_hit_count, 1u);
  f.alloc->free(again);
  f.alloc->free(other);
  f.expect_conserved();
}

TEST(Allocator, RecordStreamWithIdleStreamPoolsImmediately) {
  Fixture f;
  BlockRef b = f.alloc->allocate(64, s0);
  f.alloc->record_stream(b, s1);  // s1 has nothing queued
  f.alloc->free(b);
  EXPECT_EQ(f.alloc->pending_free_count(), 0u);
  EXPECT_EQ(f.alloc->allocate(64, s0).ptr, b.ptr);
}

TEST(Allocator, EmptyCacheReleasesOnlyCachedBytes) {
  Fixture f;
  BlockRef live = f.alloc->allocate(3000, s0);
  for (int i = 0; i < 4; ++i) f.alloc->free(f.alloc->allocate(512 * (i + 1), s0));
  const AllocStats before = f.alloc->stats();
  EXPECT_GT(before.bytes_cached, 0u);
  const std::size_t released = f.alloc->empty_cache();
  EXPECT_EQ(released, before.bytes_cached);
  EXPECT_GT(released, 0u);
  EXPECT_EQ(f.alloc->empty_cache(), 0u);
  const AllocStats after = f.alloc->stats();
  EXPECT_EQ(after.bytes_cached, 0u);
  EXPECT_EQ(after.bytes_in_use, before.bytes_in_use);
  EXPECT_EQ(after.raw_free_count, before.raw_free_count + 4);
  f.expect_conserved();
  f.alloc->free(live);
}

TEST(Allocator, OutOfMemoryRetriesAfterEmptyingCache) {
  Fixture f(HostBackendOptions{.capacity_bytes = 2048});
  BlockRef a = f.alloc->allocate(1024, s0);
  f.alloc->free(a);  // 1024 cached
  BlockRef b = f.alloc->allocate(1536, s0);  // 1024 + 1536 > 2048 until the cache is dropped
  EXPECT_TRUE(b);
  const AllocStats s = f.alloc->stats();
  EXPECT_EQ(s.bytes_cached, 0u);
  EXPECT_EQ(s.raw_free_count, 1u);
  EXPECT_EQ(mt_test::error_code_of([&] { f.alloc->allocate(1024, s0); }), ErrorCode::OutOfMemory);
  f.alloc->free(b);
  f.expect_conserved();
}

TEST(Allocator, NonCachingModeGoesToBackend) {
  Fixture f({}, AllocatorConfig{.caching = false});
  for (int i = 0; i < 5; ++i) f.alloc->free(f.alloc->allocate(100, s0));
  const AllocStats s = f.alloc->stats();
  EXPECT_EQ(s.raw_alloc_count, 5u);
  EXPECT_EQ(s.raw_free_count, 5u);
  EXPECT_EQ(s.cache_hit_count, 0u);
  EXPECT_EQ(s.bytes_cached, 0u);
  EXPECT_EQ(f.backend->outstanding_bytes(), 0u);
}

TEST(Allocator, PeakTracksMaximumInUse) {
  Fixture f;
  BlockRef a = f.alloc->allocate(512, s0);
  BlockRef b = f.alloc->allocate(1024, s0);
  f.alloc->free(a);
  f.alloc->free(b);
  EXPECT_EQ(f.alloc->stats().peak_bytes_in_use, 1536u);
  f.alloc->reset_peak();
  EXPECT_EQ(f.alloc->stats().peak_bytes_in_use, 0u);
}

TEST(Allocator, ConservationUnderRandomOperations) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Fixture f(HostBackendOptions{.capacity_bytes = 64 * 1024});
    Xoshiro256 rng(seed);
    std::vector<BlockRef> live;
    std::uint64_t hits = 0, raws = 0;
    for (int step = 0; step < 400; ++step) {
      const auto action = rng.below(10);
      if (action < 5) {
        const std::size_t n = 1 + rng.below(4096);
        const StreamId s{static_cast<int>(rng.below(3))};
        const AllocStats before = f.alloc->stats();
        try {
          live.push_back(f.alloc->allocate(n, s));
        } catch (const Error& e) {
          ASSERT_EQ(e.code(), ErrorCode::OutOfMemory);
          continue;
        }
        const AllocStats after = f.alloc->stats();
        // Exactly one of the two counters moves per successful allocate.
        EXPECT_EQ((after.cache_hit_count - before.cache_hit_count) +
                      (after.raw_alloc_count - before.raw_alloc_count),
                  1u);
        hits = after.cache_hit_count;
        raws = after.raw_alloc_count;
      } else if (action < 9 && !live.empty()) {
        const auto i = rng.below(live.size());
        f.alloc->free(live[i]);
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
      } else {
        f.alloc->empty_cache();
      }
      f.expect_conserved();
      const AllocStats s = f.alloc->stats();
      EXPECT_GE(s.cache_hit_count, hits);
      EXPECT_GE(s.raw_alloc_count, raws);
      EXPECT_LE(s.bytes_in_use, s.peak_bytes_in_use);
    }
    for (const auto& b : live) f.alloc->free(b);
    f.expect_conserved();
  }
}

TEST(Allocator, DestructorReturnsEverythingToBackend) {
  Executor device;
  auto backend = std::make_shared<HostBackend>(HostBackendOptions{.device = &device});
  {
    CachingAllocator alloc(backend, {}, &device);
    alloc.free(alloc.allocate(4096, s0));
    alloc.free(alloc.allocate(100, s1));
    EXPECT_GT(backend->outstanding_bytes(), 0u);
  }
  EXPECT_EQ(backend->outstanding_bytes(), 0u);
}

TEST(Allocator, RawFreeDrainsAllStreams) {
  Executor device;
  auto backend = std::make_shared<HostBackend>(HostBackendOptions{.device = &device});
  void* p = backend->raw_alloc(512);
  std::atomic<bool> ran{false};
  device.enqueue(s1, "slow", [&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    ran = true;
  });
  backend->raw_free(p, 512);
  EXPECT_TRUE(ran.load());
}

// A kernel still writing a block when the host frees it and reallocates the
// same size on the same stream: the next user is queued behind the writer.
TEST(Allocator, FreeBeforeLastUseMatchesSerializedOracle) {
  for (int trial = 0; trial < 50; ++trial) {
    Fixture f;
    constexpr std::size_t kCount = 256;
    BlockRef a = f.alloc->allocate(kCount * sizeof(int), s0);
    int* pa = static_cast<int*>(a.ptr);
    f.device.enqueue(s0, "slow_write", [pa, trial] {
      spin_for(std::chrono::microseconds(200));
      for (std::size_t i = 0; i < kCount; ++i) pa[i] = trial * 1000 + static_cast<int>(i);
    });
    f.alloc->free(a);
    BlockRef b = f.alloc->allocate(kCount * sizeof(int), s0);
    ASSERT_EQ(b.ptr, a.ptr);  // reused before the writer finished
    int* pb = static_cast<int*>(b.ptr);
    std::vector<int> out(kCount);
    f.device.enqueue(s0, "overwrite", [pb] {
      for (std::size_t i = 0; i < kCount; ++i) pb[i] = -static_cast<int>(i);
    });
    f.device.enqueue(s0, "read", [pb, &out] { std::memcpy(out.data(), pb, kCount * sizeof(int)); });
    f.device.synchronize();
    for (std::size_t i = 0; i < kCount; ++i) ASSERT_EQ(out[i], -static_cast<int>(i));
    f.alloc->free(b);
  }
}

namespace {

struct PoisonOutcome {
  int corrupted = 0;
  int reused = 0;
};

// A reader on s1 checks a block filled on s0 while the host frees the block
// and immediately reallocates and poisons the same size on s0.
PoisonOutcome run_poison_trials(int trials, bool record, std::uint64_t seed) {
  Fixture f;
  Xoshiro256 rng(seed);
  PoisonOutcome outcome;
  std::atomic<int> corrupted{0};
  constexpr std::size_t kBytes = 1024;
  for (int t = 0; t < trials; ++t) {
    const auto pattern = static_cast<unsigned char>(1 + t % 200);
    const auto delay = std::chrono::microseconds(record ? rng.below(150) : 1500);
    BlockRef b = f.alloc->allocate(kBytes, s0);
    auto* p = static_cast<unsigned char*>(b.ptr);
    f.device.enqueue(s0, "fill", [p, pattern] { std::memset(p, pattern, kBytes); });
    f.device.wait_event(s1, f.device.record_event(s0));
    f.device.enqueue(s1, "check", [p, pattern, delay, &corrupted] {
      spin_for(delay);
      for (std::size_t i = 0; i < kBytes; ++i) {
        if (p[i] != pattern) {
          corrupted.fetch_add(1);
          return;
        }
      }
    });
    if (record) f.alloc->record_stream(b, s1);
    f.alloc->free(b);
    BlockRef c = f.alloc->allocate(kBytes, s0);
    auto* q = static_cast<unsigned char*>(c.ptr);
    f.device.enqueue(s0, "poison", [q] { std::memset(q, 0xDE, kBytes); });
    if (c.ptr == b.ptr) ++outcome.reused;
    f.alloc->free(c);
    if (t % 16 == 15) f.device.synchronize();
  }
  f.device.synchronize();
  outcome.corrupted = corrupted.load();
  return outcome;
}

}  // namespace

TEST(Allocator, PoisonHarnessNoCrossStreamReuseBeforeEvent) {
  const PoisonOutcome outcome = run_poison_trials(400, /*record=*/true, 7);
  EXPECT_EQ(outcome.corrupted, 0);
  EXPECT_LT(outcome.reused, 400);  // the deferred path was exercised
}

TEST(Allocator, PoisonHarnessDetectsMissingRecordStream) {
  const PoisonOutcome outcome = run_poison_trials(4, /*record=*/false, 7);
  EXPECT_EQ(outcome.reused, 4);
  EXPECT_GT(outcome.corrupted, 0);
}

// Random multi-stream tensor programs whose cross-stream dependencies go
// through events. Results must match the same program run in Sync mode.
namespace {

struct Slot {
  Tensor t;
  StreamId writer{};
  std::set<StreamId> readers;
};

void order_after(StreamId s, StreamId producer) {
  if (s != producer) Executor::global().wait_event(s, Executor::global().record_event(producer));
}

std::vector<std::vector<double>> run_stream_program(std::uint64_t seed, bool inject_delays) {
  Xoshiro256 rng(seed);
  std::mt19937 delay_rng(static_cast<unsigned>(seed * 31 + 5));
  std::vector<Slot> slots;
  auto maybe_delay = [&](StreamId s) {
    if (!inject_delays || delay_rng() % 3 != 0) return;
    const auto us = std::chrono::microseconds(delay_rng() % 80);
    Executor::global().enqueue(s, "delay", [us] { spin_for(us); });
  };
  for (int step = 0; step < 40; ++step) {
    const StreamId s{static_cast<int>(rng.below(3))};
    const auto action = rng.below(10);
    maybe_delay(s);
    if (action < 3 || slots.size() < 2) {
      StreamGuard guard(s);
      slots.push_back({full({128}, static_cast<double>(rng.below(100)), DType::F64), s, {}});
    } else if (action < 6) {
      Slot& a = slots[rng.below(slots.size())];
      Slot& b = slots[rng.below(slots.size())];
      order_after(s, a.writer);
      order_after(s, b.writer);
      a.readers.insert(s);
      b.readers.insert(s);
      StreamGuard guard(s);
      Tensor c = add(mul(a.t, 0.5), b.t);
      slots.push_back({c, s, {}});
    } else if (action < 8) {
      Slot& a = slots[rng.below(slots.size())];
      order_after(s, a.writer);
      for (StreamId r : a.readers) order_after(s, r);
      StreamGuard guard(s);
      a.t.add_(static_cast<double>(step));
      a.writer = s;
      a.readers.clear();
    } else {
      // Drop a tensor; its block may be recycled right away.
      slots.erase(slots.begin() + static_cast<std::ptrdiff_t>(rng.below(slots.size())));
    }
  }
  std::vector<std::vector<double>> out;
  for (const Slot& slot : slots) out.push_back(to_host(slot.t));
  return out;
}

}  // namespace

TEST(Allocator, StreamSafetyUnderRandomSchedules) {
  Executor& ex = Executor::global();
  ex.synchronize();
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    ex.set_mode(ExecMode::Sync);
    const auto oracle = run_stream_program(seed, false);
    ex.synchronize();
    ex.set_mode(ExecMode::Async);
    const auto got = run_stream_program(seed, true);
    ex.synchronize();
    ASSERT_EQ(got, oracle) << "seed " << seed;
  }
}

TEST(Allocator, TensorStorageRecyclesThroughGlobalCache) {
  CachingAllocator& alloc = CachingAllocator::global();
  Executor::global().synchronize();
  { Tensor warm = zeros({1000}); }
  const AllocStats before = alloc.stats();
  for (int i = 0; i < 10; ++i) {
    Tensor t = zeros({1000});
  }
  const AllocStats after = alloc.stats();
  EXPECT_EQ(after.raw_alloc_count, before.raw_alloc_count);
  EXPECT_GE(after.cache_hit_count - before.cache_hit_count, 10u);
}
