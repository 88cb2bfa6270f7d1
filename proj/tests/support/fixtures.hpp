// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <set>
#include <vector>

#include "swin3d/point_cloud.hpp"
#include "swin3d/random.hpp"
#include "swin3d/voxel_grid.hpp"

namespace swin3d::testing {

// Uniform points in [lo, hi)^3 with random colors (and normals when m == 9).
inline PointCloud uniform_cloud(std::size_t n, double lo, double hi, Rng& rng, std::size_t m = 6) {
    PointCloud pc(m);
    std::vector<double> row(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) row[c] = uniform(rng, lo, hi);
        for (std::size_t c = 3; c < m; ++c) row[c] = uniform(rng, -1.0, 1.0);
        pc.add(row);
    }
    return pc;
}

// A level with `n` distinct random voxel coordinates in [-extent, extent)^3
// (voxel size 1), each with its representative at a random spot inside.
inline SparseVoxelLevel random_level(std::size_t n, std::int64_t extent, Rng& rng, std::size_t m = 6) {
    std::set<VoxelCoord> coords;
    std::uniform_int_distribution<std::int64_t> pick(-extent, extent - 1);
    while (coords.size() < n) coords.insert({pick(rng), pick(rng), pick(rng)});
    std::vector<VoxelRecord> cells;
    std::size_t source = 0;
    for (const auto& c : coords) {
        VoxelRecord r;
        r.coord = c;
        for (int a = 0; a < 3; ++a) r.rep_point[a] = static_cast<double>(c[a]) + uniform(rng, 0.0, 1.0);
        r.rep_signal.assign(m, 0.0);
        for (int a = 0; a < 3; ++a) r.rep_signal[a] = r.rep_point[a];
        for (std::size_t ch = 3; ch < m; ++ch) r.rep_signal[ch] = uniform(rng, -1.0, 1.0);
        r.source_point = source++;
        cells.push_back(std::move(r));
    }
    return SparseVoxelLevel(1, 1.0, std::move(cells));
}

}  // namespace swin3d::testing
