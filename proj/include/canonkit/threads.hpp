#pragma once

#include <functional>

namespace canonkit {

/// Worker count used by parallel_for. 1 means run inline on the caller.
void set_num_threads(int n);
int get_num_threads();

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one per
/// worker; fn must not touch shared mutable state across indices.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace canonkit
