#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "sbm/random.hpp"

namespace sbm {

/// Runs fn(replica, rng) for replica = 0..count-1 on up to `threads`
/// workers. Replica r always receives the stream (seed, experiment, r) and
/// results come back indexed by replica, so the thread count never changes
/// the output. The first exception thrown by any replica is rethrown.
template <class Fn>
auto run_replicas(std::size_t count, std::uint64_t seed, std::uint64_t experiment, unsigned threads, Fn&& fn) {
  using Result = decltype(fn(std::size_t{}, std::declval<Rng&>()));
  std::vector<Result> out(count);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= count) return;
      try {
        Rng rng = Rng::stream(seed, experiment, r);
        out[r] = fn(r, rng);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

inline unsigned default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

}  // namespace sbm
