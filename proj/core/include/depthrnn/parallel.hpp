// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_PARALLEL_HPP_
#define DEPTHRNN_PARALLEL_HPP_

#include <cstddef>
#include <functional>

namespace depthrnn {

// Worker cap: DEPTHRNN_THREADS when set to a positive integer, otherwise the
// hardware concurrency (at least 1).
std::size_t worker_count();

// Runs body(i) for i in [0, n) across up to worker_count() threads. Each
// index runs exactly once; the first exception thrown is rethrown after all
// workers stop. Callers own any merging of results, so output does not
// depend on the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace depthrnn

#endif  // DEPTHRNN_PARALLEL_HPP_
