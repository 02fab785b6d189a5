#pragma once

#include <cstddef>
#include <functional>

namespace goi {

/// Worker count used by parallel_for. Defaults to GOI_THREADS from the
/// environment, else 1.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Calls body(i) for i in [0, n). Work is split into contiguous blocks, one
/// per worker. Callers must write to disjoint outputs; any reduction happens
/// afterwards in index order so results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace goi
