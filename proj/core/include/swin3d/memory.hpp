// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Instrumented allocation accounting. Every Tensor buffer and attention
// workspace is allocated through TrackingAllocator, which reports to the
// MemoryTracker installed on the calling thread (if any) under the
// MemoryTag that is current on that thread.

#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <new>
#include <string_view>
#include <vector>

namespace swin3d {

enum class MemoryTag : std::uint8_t {
    General = 0,
    // N x N x heads attention coefficient arrays.
    Coefficients = 1,
    // Other attention scratch: row statistics, gathered window rows, accumulators.
    Workspace = 2,
};

inline constexpr std::size_t kMemoryTagCount = 3;

std::string_view to_string(MemoryTag tag);

struct MemoryStats {
    std::int64_t live_bytes = 0;
    std::int64_t peak_bytes = 0;
    std::int64_t total_bytes = 0;  // cumulative bytes ever allocated
    std::int64_t alloc_count = 0;
};

class MemoryTracker {
public:
    MemoryTracker() = default;
    MemoryTracker(const MemoryTracker&) = delete;
    MemoryTracker& operator=(const MemoryTracker&) = delete;

    void on_allocate(MemoryTag tag, std::size_t bytes) noexcept;
    void on_deallocate(MemoryTag tag, std::size_t bytes) noexcept;

    MemoryStats stats(MemoryTag tag) const noexcept;
    MemoryStats total() const noexcept;

    // Clears cumulative counters and sets peaks to the current live values.
    void reset_peaks() noexcept;

    // Tracker installed on this thread, or nullptr.
    static MemoryTracker* current() noexcept;
    static MemoryTag current_tag() noexcept;

private:
    friend class TrackerScope;
    friend class TagScope;

    struct Counters {
        std::atomic<std::int64_t> live{0};
        std::atomic<std::int64_t> peak{0};
        std::atomic<std::int64_t> total{0};
        std::atomic<std::int64_t> count{0};

        void add(std::int64_t bytes) noexcept;
        void sub(std::int64_t bytes) noexcept;
        MemoryStats snapshot() const noexcept;
    };

    std::array<Counters, kMemoryTagCount> per_tag_;
    Counters all_;
};

// Installs a tracker on the current thread for the scope's lifetime.
class TrackerScope {
public:
    explicit TrackerScope(MemoryTracker* tracker) noexcept;
    ~TrackerScope();
    TrackerScope(const TrackerScope&) = delete;
    TrackerScope& operator=(const TrackerScope&) = delete;

private:
    MemoryTracker* previous_;
};

class TagScope {
public:
    explicit TagScope(MemoryTag tag) noexcept;
    ~TagScope();
    TagScope(const TagScope&) = delete;
    TagScope& operator=(const TagScope&) = delete;

private:
    MemoryTag previous_;
};

namespace detail {
void* tracked_allocate(std::size_t bytes);
void tracked_deallocate(void* p) noexcept;
}  // namespace detail

// Stateless allocator: the tracker and tag are captured at allocation time
// and stored in a small header in front of the block, so deallocation is
// attributed correctly regardless of which scope frees it.
template <class T>
struct TrackingAllocator {
    using value_type = T;

    TrackingAllocator() noexcept = default;
    template <class U>
    TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        if (n > static_cast<std::size_t>(-1) / sizeof(T) / 2) {
            throw std::bad_array_new_length();
        }
        return static_cast<T*>(detail::tracked_allocate(n * sizeof(T)));
    }
    void deallocate(T* p, std::size_t) noexcept { detail::tracked_deallocate(p); }

    template <class U>
    bool operator==(const TrackingAllocator<U>&) const noexcept {
        return true;
    }
};

using Buffer = std::vector<double, TrackingAllocator<double>>;

template <class T>
using TrackedVector = std::vector<T, TrackingAllocator<T>>;

}  // namespace swin3d
