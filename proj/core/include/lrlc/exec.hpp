#pragma once

#include <cstddef>
#include <functional>

namespace lrlc::exec {

/// Test mode pins 64-bit training paths, a single thread and serial
/// reductions; results are then bitwise reproducible run to run.
bool test_mode();
void set_test_mode(bool on);

/// Worker thread count for data-parallel loops. 0 = hardware concurrency.
/// Reads 1 while test mode is on.
unsigned threads();
void set_threads(unsigned n);

/// Splits [0, n) into contiguous chunks, one per worker. The partition is a
/// pure function of (n, threads()), so outputs written to disjoint ranges are
/// identical across runs regardless of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace lrlc::exec
