// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical sparse voxel grid with representative points, and the
// regular/shifted window partitions attention runs on.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "swin3d/point_cloud.hpp"

namespace swin3d {

using VoxelCoord = std::array<std::int64_t, 3>;

struct VoxelCoordHash {
    std::size_t operator()(const VoxelCoord& c) const noexcept;
};

// Floor division for a positive divisor.
constexpr std::int64_t floor_div(std::int64_t a, std::int64_t b) noexcept {
    const std::int64_t q = a / b;
    return (a % b != 0 && a < 0) ? q - 1 : q;
}

VoxelCoord voxel_coord_of(std::span<const double> position, double voxel_size);

struct VoxelRecord {
    VoxelCoord coord{};
    std::array<double, 3> rep_point{};
    std::vector<double> rep_signal;
    // Lexicographically sorted coordinates at the next finer level; empty at the finest.
    std::vector<VoxelCoord> children;
    // Index of the representative point in the source cloud.
    std::size_t source_point = 0;
};

// One level of the grid. Cells are stored sorted by coordinate, so the
// voxel index of a cell is its lexicographic rank; feature matrices use
// that same row order.
class SparseVoxelLevel {
public:
    SparseVoxelLevel() = default;
    SparseVoxelLevel(int level, double voxel_size, std::vector<VoxelRecord> cells);

    int level() const noexcept { return level_; }
    double voxel_size() const noexcept { return voxel_size_; }
    std::size_t size() const noexcept { return cells_.size(); }
    bool empty() const noexcept { return cells_.empty(); }
    std::size_t signal_channels() const noexcept;

    const VoxelRecord& operator[](std::size_t i) const noexcept { return cells_[i]; }
    const std::vector<VoxelRecord>& cells() const noexcept { return cells_; }

    std::optional<std::size_t> find(const VoxelCoord& c) const;
    std::array<double, 3> center(std::size_t i) const noexcept;

private:
    int level_ = 1;
    double voxel_size_ = 0.0;
    std::vector<VoxelRecord> cells_;
    std::unordered_map<VoxelCoord, std::size_t, VoxelCoordHash> index_;
};

struct VoxelHierarchy {
    std::vector<SparseVoxelLevel> levels;
    // strides[l] maps level l to level l+1.
    std::vector<int> strides;
    // parents[l][i] is the index at level l+1 of voxel i at level l.
    std::vector<std::vector<std::size_t>> parents;
};

// One cell per occupied voxel of size voxel_size. The representative point
// of the voxel with coordinate c and k member points (in input order) is
// member number mix64(seed ^ mix64(hash(c))) mod k.
SparseVoxelLevel voxelize(const PointCloud& pc, double voxel_size, std::uint64_t seed);

// Builds `levels` levels starting from `base`. The representative of a
// coarse voxel is the child representative closest to the centroid of all
// child representatives, ties going to the smallest child coordinate.
VoxelHierarchy build_hierarchy(SparseVoxelLevel base, int levels, std::span<const int> strides);

struct Window {
    VoxelCoord coord{};
    // Voxel indices of the level, in lexicographic coordinate order.
    std::vector<std::size_t> members;
};

struct WindowPartition {
    int window_size = 1;
    bool shifted = false;
    // Physical edge length of a window: window_size * voxel_size.
    double window_height = 0.0;
    std::size_t voxel_count = 0;
    // Sorted by window coordinate.
    std::vector<Window> windows;

    std::size_t max_window() const noexcept;
};

// Voxel at c joins window floor((c + offset) / M) with offset floor(M/2)
// per axis when shifted, zero otherwise.
WindowPartition partition_windows(const SparseVoxelLevel& level, int window_size, bool shifted);

// "level cx cy cz rx ry rz" per voxel, levels numbered from 1.
void write_hierarchy_dump(std::ostream& out, const VoxelHierarchy& hierarchy);

}  // namespace swin3d
