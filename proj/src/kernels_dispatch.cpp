#include "hinet/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace hinet::kernels {

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
    static const bool ok = [] {
        __builtin_cpu_init();
        return __builtin_cpu_supports("avx2") != 0;
    }();
    return ok;
#else
    return false;
#endif
}

namespace {

Backend resolve_initial() {
    if (const char* env = std::getenv("HINET_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::kScalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return Backend::kAvx2;
    }
    return avx2_supported() ? Backend::kAvx2 : Backend::kScalar;
}

std::atomic<Backend>& backend_slot() {
    static std::atomic<Backend> slot{resolve_initial()};
    return slot;
}

}  // namespace

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
    if (b == Backend::kAvx2 && !avx2_supported()) b = Backend::kScalar;
    backend_slot().store(b, std::memory_order_relaxed);
}

std::string backend_name(Backend b) {
    return b == Backend::kAvx2 ? "avx2" : "scalar";
}

const Ops& ops() {
    return active_backend() == Backend::kAvx2 ? avx2_ops() : scalar_ops();
}

}  // namespace hinet::kernels
