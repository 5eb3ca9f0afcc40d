#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

namespace hinet {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& what) { throw Error(what); }

inline void require(bool cond, const std::string& what) {
    if (!cond) fail(what);
}

// Number of worker threads, capped by the HINET_THREADS environment variable.
int thread_count();

// Runs fn(begin, end) over [0, n) split into contiguous ranges. Ranges are
// disjoint, so writers to disjoint outputs stay deterministic; results must
// not depend on the split (no cross-range reductions inside fn).
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace hinet
