// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace soar {

/// Worker cap: SOAR_THREADS when set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
unsigned worker_count();

/// Runs body(i) for i in [0, count) on up to `workers` threads. Work items are
/// claimed dynamically, so callers must not depend on completion order.
/// Exceptions escaping body are the caller's responsibility to capture.
void parallel_for(std::size_t count, unsigned workers,
                  const std::function<void(std::size_t)>& body);

}  // namespace soar
