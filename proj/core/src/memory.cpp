// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/memory.hpp"

#include <cstdlib>

namespace swin3d {

namespace {

thread_local MemoryTracker* t_tracker = nullptr;
thread_local MemoryTag t_tag = MemoryTag::General;

struct alignas(alignof(std::max_align_t)) BlockHeader {
    MemoryTracker* tracker;
    std::size_t bytes;
    MemoryTag tag;
};

constexpr std::size_t kHeaderSize = sizeof(BlockHeader);

}  // namespace

std::string_view to_string(MemoryTag tag) {
    switch (tag) {
        case MemoryTag::General: return "general";
        case MemoryTag::Coefficients: return "coefficients";
        case MemoryTag::Workspace: return "workspace";
    }
    return "unknown";
}

void MemoryTracker::Counters::add(std::int64_t bytes) noexcept {
    const std::int64_t now = live.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    total.fetch_add(bytes, std::memory_order_relaxed);
    count.fetch_add(1, std::memory_order_relaxed);
    std::int64_t prev = peak.load(std::memory_order_relaxed);
    while (now > prev && !peak.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
    }
}

void MemoryTracker::Counters::sub(std::int64_t bytes) noexcept {
    live.fetch_sub(bytes, std::memory_order_relaxed);
}

MemoryStats MemoryTracker::Counters::snapshot() const noexcept {
    return MemoryStats{live.load(std::memory_order_relaxed), peak.load(std::memory_order_relaxed),
                       total.load(std::memory_order_relaxed), count.load(std::memory_order_relaxed)};
}

void MemoryTracker::on_allocate(MemoryTag tag, std::size_t bytes) noexcept {
    const auto b = static_cast<std::int64_t>(bytes);
    per_tag_[static_cast<std::size_t>(tag)].add(b);
    all_.add(b);
}

void MemoryTracker::on_deallocate(MemoryTag tag, std::size_t bytes) noexcept {
    const auto b = static_cast<std::int64_t>(bytes);
    per_tag_[static_cast<std::size_t>(tag)].sub(b);
    all_.sub(b);
}

MemoryStats MemoryTracker::stats(MemoryTag tag) const noexcept {
    return per_tag_[static_cast<std::size_t>(tag)].snapshot();
}

MemoryStats MemoryTracker::total() const noexcept { return all_.snapshot(); }

void MemoryTracker::reset_peaks() noexcept {
    auto reset = [](Counters& c) {
        c.peak.store(c.live.load(std::memory_order_relaxed), std::memory_order_relaxed);
        c.total.store(0, std::memory_order_relaxed);
        c.count.store(0, std::memory_order_relaxed);
    };
    for (auto& c : per_tag_) reset(c);
    reset(all_);
}

MemoryTracker* MemoryTracker::current() noexcept { return t_tracker; }
MemoryTag MemoryTracker::current_tag() noexcept { return t_tag; }

TrackerScope::TrackerScope(MemoryTracker* tracker) noexcept : previous_(t_tracker) { t_tracker = tracker; }
TrackerScope::~TrackerScope() { t_tracker = previous_; }

TagScope::TagScope(MemoryTag tag) noexcept : previous_(t_tag) { t_tag = tag; }
TagScope::~TagScope() { t_tag = previous_; }

namespace detail {

void* tracked_allocate(std::size_t bytes) {
    void* raw = ::operator new(bytes + kHeaderSize, std::align_val_t{alignof(BlockHeader)});
    auto* header = static_cast<BlockHeader*>(raw);
    header->tracker = t_tracker;
    header->bytes = bytes;
    header->tag = t_tag;
    if (t_tracker != nullptr) t_tracker->on_allocate(t_tag, bytes);
    return static_cast<char*>(raw) + kHeaderSize;
}

void tracked_deallocate(void* p) noexcept {
    if (p == nullptr) return;
    auto* header = reinterpret_cast<BlockHeader*>(static_cast<char*>(p) - kHeaderSize);
    if (header->tracker != nullptr) header->tracker->on_deallocate(header->tag, header->bytes);
    ::operator delete(header, std::align_val_t{alignof(BlockHeader)});
}

}  // namespace detail

}  // namespace swin3d
