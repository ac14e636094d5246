#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace traforest {

/// Worker count: hardware concurrency, capped by TRAFOREST_THREADS when set.
unsigned worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads. Indices are
/// handed out dynamically; the first exception thrown by any body is
/// rethrown after all workers have stopped.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed for stream `index` under `master`.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace traforest
