#include "hinet/mem.hpp"

namespace hinet {

MemProbe& MemProbe::instance() {
    static MemProbe probe;
    return probe;
}

namespace {
void raise_peak(std::atomic<std::size_t>& peak, std::size_t value) {
    std::size_t prev = peak.load(std::memory_order_relaxed);
    while (prev < value && !peak.compare_exchange_weak(prev, value, std::memory_order_relaxed)) {
    }
}
}  // namespace

void MemProbe::on_alloc(AllocClass c, std::size_t count) {
    const int i = int(c);
    const std::size_t cur = current_[i].fetch_add(count, std::memory_order_relaxed) + count;
    raise_peak(peak_[i], cur);
    const std::size_t tot = current_total_.fetch_add(count, std::memory_order_relaxed) + count;
    raise_peak(peak_total_, tot);
    alloc_events_.fetch_add(1, std::memory_order_relaxed);
}

void MemProbe::on_free(AllocClass c, std::size_t count) {
    current_[int(c)].fetch_sub(count, std::memory_order_relaxed);
    current_total_.fetch_sub(count, std::memory_order_relaxed);
}

void MemProbe::reset_peaks() {
    for (int i = 0; i < kNumAllocClasses; ++i)
        peak_[i].store(current_[i].load(std::memory_order_relaxed), std::memory_order_relaxed);
    peak_total_.store(current_total_.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

MemProbe::Snapshot MemProbe::snapshot() const {
    Snapshot s{};
    s.current_total = current_total_.load(std::memory_order_relaxed);
    s.peak_total = peak_total_.load(std::memory_order_relaxed);
    for (int i = 0; i < kNumAllocClasses; ++i) {
        s.current[i] = current_[i].load(std::memory_order_relaxed);
        s.peak[i] = peak_[i].load(std::memory_order_relaxed);
    }
    return s;
}

std::size_t MemProbe::current_total() const {
    return current_total_.load(std::memory_order_relaxed);
}

std::size_t MemProbe::peak_transient() const {
    return peak_[int(AllocClass::kTransient)].load(std::memory_order_relaxed);
}

void MemProbe::registry_add(const void* key, const std::string& label, std::size_t count, AllocClass c) {
    std::lock_guard<std::mutex> lock(registry_mu_);
    registry_[key] = Entry{label, count, c};
}

void MemProbe::registry_remove(const void* key) {
    std::lock_guard<std::mutex> lock(registry_mu_);
    registry_.erase(key);
}

std::size_t MemProbe::registry_live_count() const {
    std::lock_guard<std::mutex> lock(registry_mu_);
    return registry_.size();
}

}  // namespace hinet
