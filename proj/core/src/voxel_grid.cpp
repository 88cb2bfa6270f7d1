// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/voxel_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "swin3d/errors.hpp"
#include "swin3d/random.hpp"

namespace swin3d {

std::size_t VoxelCoordHash::operator()(const VoxelCoord& c) const noexcept {
    std::uint64_t h = mix64(static_cast<std::uint64_t>(c[0]));
    h = mix64(h ^ static_cast<std::uint64_t>(c[1]));
    h = mix64(h ^ static_cast<std::uint64_t>(c[2]));
    return static_cast<std::size_t>(h);
}

VoxelCoord voxel_coord_of(std::span<const double> position, double voxel_size) {
    return {static_cast<std::int64_t>(std::floor(position[0] / voxel_size)),
            static_cast<std::int64_t>(std::floor(position[1] / voxel_size)),
            static_cast<std::int64_t>(std::floor(position[2] / voxel_size))};
}

SparseVoxelLevel::SparseVoxelLevel(int level, double voxel_size, std::vector<VoxelRecord> cells)
    : level_(level), voxel_size_(voxel_size), cells_(std::move(cells)) {
    std::sort(cells_.begin(), cells_.end(),
              [](const VoxelRecord& a, const VoxelRecord& b) { return a.coord < b.coord; });
    index_.reserve(cells_.size());
    for (std::size_t i = 0; i < cells_.size(); ++i) {
        if (!index_.emplace(cells_[i].coord, i).second) {
            throw InputError("sparse voxel level: duplicate cell coordinate");
        }
    }
}

std::size_t SparseVoxelLevel::signal_channels() const noexcept {
    return cells_.empty() ? 0 : cells_.front().rep_signal.size();
}

std::optional<std::size_t> SparseVoxelLevel::find(const VoxelCoord& c) const {
    auto it = index_.find(c);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::array<double, 3> SparseVoxelLevel::center(std::size_t i) const noexcept {
    const auto& c = cells_[i].coord;
    return {(static_cast<double>(c[0]) + 0.5) * voxel_size_, (static_cast<double>(c[1]) + 0.5) * voxel_size_,
            (static_cast<double>(c[2]) + 0.5) * voxel_size_};
}

SparseVoxelLevel voxelize(const PointCloud& pc, double voxel_size, std::uint64_t seed) {
    if (!(voxel_size > 0.0)) throw InputError("voxelize: voxel size must be positive");
    if (pc.empty()) throw InputError("voxelize: empty point cloud");

    std::unordered_map<VoxelCoord, std::vector<std::size_t>, VoxelCoordHash> members;
    for (std::size_t i = 0; i < pc.size(); ++i) {
        members[voxel_coord_of(pc.signal(i), voxel_size)].push_back(i);
    }

    std::vector<VoxelRecord> cells;
    cells.reserve(members.size());
    const VoxelCoordHash hasher;
    for (const auto& [coord, points] : members) {
        const std::uint64_t draw = mix64(seed ^ mix64(hasher(coord)));
        const std::size_t pick = points[draw % points.size()];
        VoxelRecord rec;
        rec.coord = coord;
        rec.rep_point = pc.position(pick);
        auto s = pc.signal(pick);
        rec.rep_signal.assign(s.begin(), s.end());
        rec.source_point = pick;
        cells.push_back(std::move(rec));
    }
    return SparseVoxelLevel(1, voxel_size, std::move(cells));
}

namespace {

double squared_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

SparseVoxelLevel coarsen(const SparseVoxelLevel& fine, int stride, std::vector<std::size_t>& parents) {
    // std::map keeps coarse cells and their children in lexicographic order.
    std::map<VoxelCoord, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < fine.size(); ++i) {
        const auto& c = fine[i].coord;
        groups[{floor_div(c[0], stride), floor_div(c[1], stride), floor_div(c[2], stride)}].push_back(i);
    }

    std::vector<VoxelRecord> cells;
    cells.reserve(groups.size());
    parents.assign(fine.size(), 0);
    std::size_t coarse_index = 0;
    for (const auto& [coord, children] : groups) {
        std::array<double, 3> centroid{0.0, 0.0, 0.0};
        for (auto ci : children)
            for (int a = 0; a < 3; ++a) centroid[a] += fine[ci].rep_point[a];
        for (auto& v : centroid) v /= static_cast<double>(children.size());

        // Children are visited in increasing coordinate order, so a strict
        // comparison keeps the lexicographically smallest among ties.
        std::size_t best = children.front();
        double best_d = std::numeric_limits<double>::infinity();
        for (auto ci : children) {
            const double d = squared_distance(fine[ci].rep_point, centroid);
            if (d < best_d) {
                best_d = d;
                best = ci;
            }
        }

        VoxelRecord rec;
        rec.coord = coord;
        rec.rep_point = fine[best].rep_point;
        rec.rep_signal = fine[best].rep_signal;
        rec.source_point = fine[best].source_point;
        rec.children.reserve(children.size());
        for (auto ci : children) {
            rec.children.push_back(fine[ci].coord);
            parents[ci] = coarse_index;
        }
        cells.push_back(std::move(rec));
        ++coarse_index;
    }
    return SparseVoxelLevel(fine.level() + 1, fine.voxel_size() * stride, std::move(cells));
}

}  // namespace

VoxelHierarchy build_hierarchy(SparseVoxelLevel base, int levels, std::span<const int> strides) {
    if (levels < 1) throw InputError("build_hierarchy: need at least one level");
    if (strides.size() != static_cast<std::size_t>(levels - 1)) {
        throw InputError(fmt::format("build_hierarchy: {} levels need {} strides, got {}", levels,
                                     levels - 1, strides.size()));
    }
    for (int s : strides) {
        if (s < 1) throw InputError(fmt::format("build_hierarchy: invalid stride {}", s));
    }
    VoxelHierarchy h;
    h.strides.assign(strides.begin(), strides.end());
    h.levels.reserve(static_cast<std::size_t>(levels));
    h.levels.push_back(std::move(base));
    for (int l = 0; l + 1 < levels; ++l) {
        std::vector<std::size_t> parents;
        SparseVoxelLevel next = coarsen(h.levels.back(), strides[static_cast<std::size_t>(l)], parents);
        h.parents.push_back(std::move(parents));
        h.levels.push_back(std::move(next));
    }
    return h;
}

std::size_t WindowPartition::max_window() const noexcept {
    std::size_t m = 0;
    for (const auto& w : windows) m = std::max(m, w.members.size());
    return m;
}

WindowPartition partition_windows(const SparseVoxelLevel& level, int window_size, bool shifted) {
    if (window_size < 1) throw InputError("partition_windows: window size must be >= 1");
    const std::int64_t m = window_size;
    const std::int64_t offset = shifted ? m / 2 : 0;

    std::map<VoxelCoord, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < level.size(); ++i) {
        const auto& c = level[i].coord;
        groups[{floor_div(c[0] + offset, m), floor_div(c[1] + offset, m), floor_div(c[2] + offset, m)}]
            .push_back(i);
    }

    WindowPartition p;
    p.window_size = window_size;
    p.shifted = shifted;
    p.window_height = static_cast<double>(window_size) * level.voxel_size();
    p.voxel_count = level.size();
    p.windows.reserve(groups.size());
    for (auto& [coord, members] : groups) p.windows.push_back(Window{coord, std::move(members)});
    return p;
}

void write_hierarchy_dump(std::ostream& out, const VoxelHierarchy& hierarchy) {
    for (std::size_t l = 0; l < hierarchy.levels.size(); ++l) {
        const auto& level = hierarchy.levels[l];
        for (std::size_t i = 0; i < level.size(); ++i) {
            const auto& r = level[i];
            out << fmt::format("{} {} {} {} {} {} {}\n", l + 1, r.coord[0], r.coord[1], r.coord[2],
                               r.rep_point[0], r.rep_point[1], r.rep_point[2]);
        }
    }
}

}  // namespace swin3d
