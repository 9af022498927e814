// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace kprobe {

// Worker cap for parallel_for. 0 means "use KPROBE_THREADS if set, else the
// hardware concurrency".
void set_num_threads(int threads);
int num_threads();

// Calls fn(i) for every i in [0, n). Work is spread over up to num_threads()
// workers; callers write results into per-index slots and reduce them in
// index order afterwards, so output never depends on the worker count.
// The first exception thrown by any fn is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace kprobe
