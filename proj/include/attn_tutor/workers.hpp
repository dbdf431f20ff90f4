#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace attn_tutor {

/// Worker count from ATTN_TUTOR_THREADS, else the hardware concurrency
/// (at least 1).
std::size_t worker_count();

/// Runs task(i) for i in [0, n) on up to `workers` threads. Tasks must not
/// share mutable state. The first exception thrown is rethrown after all
/// workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& task);

}  // namespace attn_tutor
