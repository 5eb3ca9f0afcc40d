#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

namespace hinet {

// Classification of tracked allocations. Memory criteria compare transient
// peaks; params (model weights and per-image predicted decoder parameters)
// and data (images, masks, resized planes) are constants of a run.
enum class AllocClass : int { kParams = 0, kData = 1, kTransient = 2 };
inline constexpr int kNumAllocClasses = 3;

// Process-wide counter of live tracked scalars (floats/doubles), by class.
// All large tensors in the decoder, pipeline and training path allocate
// through Buffer<T>, which reports here.
class MemProbe {
public:
    static MemProbe& instance();

    void on_alloc(AllocClass c, std::size_t count);
    void on_free(AllocClass c, std::size_t count);

    // Resets peaks to the current live counts. Does not touch live counts.
    void reset_peaks();

    struct Snapshot {
        std::size_t current[kNumAllocClasses];
        std::size_t peak[kNumAllocClasses];
        std::size_t current_total;
        std::size_t peak_total;

        std::size_t current_transient() const { return current[int(AllocClass::kTransient)]; }
        std::size_t peak_transient() const { return peak[int(AllocClass::kTransient)]; }
    };
    Snapshot snapshot() const;

    std::size_t current_total() const;
    std::size_t peak_transient() const;

    // Registry of live named allocations, for the tracking audit.
    void registry_add(const void* key, const std::string& label, std::size_t count, AllocClass c);
    void registry_remove(const void* key);
    std::size_t registry_live_count() const;
    std::uint64_t total_alloc_events() const { return alloc_events_.load(std::memory_order_relaxed); }

private:
    MemProbe() = default;

    std::atomic<std::size_t> current_[kNumAllocClasses]{};
    std::atomic<std::size_t> peak_[kNumAllocClasses]{};
    std::atomic<std::size_t> current_total_{0};
    std::atomic<std::size_t> peak_total_{0};
    std::atomic<std::uint64_t> alloc_events_{0};

    mutable std::mutex registry_mu_;
    struct Entry {
        std::string label;
        std::size_t count;
        AllocClass cls;
    };
    std::unordered_map<const void*, Entry> registry_;
};

// Tracked heap array with value semantics. The element count is reported to
// MemProbe for the lifetime of the allocation.
template <typename T>
class Buffer {
public:
    Buffer() = default;
    explicit Buffer(std::size_t n, AllocClass c = AllocClass::kTransient, const char* label = nullptr) {
        reset(n, c, label);
    }

    Buffer(const Buffer& other) { copy_from(other); }
    Buffer& operator=(const Buffer& other) {
        if (this != &other) {
            release();
            copy_from(other);
        }
        return *this;
    }
    Buffer(Buffer&& other) noexcept { steal(other); }
    Buffer& operator=(Buffer&& other) noexcept {
        if (this != &other) {
            release();
            steal(other);
        }
        return *this;
    }
    ~Buffer() { release(); }

    void reset(std::size_t n, AllocClass c = AllocClass::kTransient, const char* label = nullptr) {
        release();
        if (n == 0) return;
        data_.assign(n, T(0));
        cls_ = c;
        auto& probe = MemProbe::instance();
        probe.on_alloc(cls_, n);
        probe.registry_add(this, label ? label : "buffer", n, cls_);
    }

    void release() {
        if (!data_.empty()) {
            auto& probe = MemProbe::instance();
            probe.on_free(cls_, data_.size());
            probe.registry_remove(this);
            data_.clear();
            data_.shrink_to_fit();
        }
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

private:
    void copy_from(const Buffer& other) {
        if (other.empty()) return;
        data_ = other.data_;
        cls_ = other.cls_;
        auto& probe = MemProbe::instance();
        probe.on_alloc(cls_, data_.size());
        probe.registry_add(this, "buffer", data_.size(), cls_);
    }
    void steal(Buffer& other) {
        data_ = std::move(other.data_);
        cls_ = other.cls_;
        if (!data_.empty()) {
            auto& probe = MemProbe::instance();
            probe.registry_remove(&other);
            probe.registry_add(this, "buffer", data_.size(), cls_);
        }
        other.data_.clear();
    }

    std::vector<T> data_;
    AllocClass cls_ = AllocClass::kTransient;
};

}  // namespace hinet
