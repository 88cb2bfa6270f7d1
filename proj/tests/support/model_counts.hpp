// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "swin3d/backbone.hpp"

namespace swin3d::testing {

// Table rows per head for m signal channels: 3 position tables of length 4,
// the rest of length 16.
inline std::size_t table_rows(std::size_t m) { return 3 * 4 + (m - 3) * 16; }

// Closed-form parameter total of a config, counted by hand from the layer list.
inline std::size_t expected_parameters(const BackboneConfig& c) {
    const std::size_t m = c.signal_channels, s = c.stages();
    std::size_t n = 27 * m * c.channels[0] + 2 * c.channels[0];
    for (std::size_t l = 0; l < s; ++l) {
        const std::size_t ch = c.channels[l], hidden = c.mlp_ratio * ch;
        const std::size_t block = 4 * ch + 3 * ch * ch + 3 * table_rows(m) * ch + ch * hidden + hidden + hidden * ch + ch;
        n += static_cast<std::size_t>(c.depths[l]) * block;
    }
    for (std::size_t l = 0; l + 1 < s; ++l) {
        n += 2 * c.channels[l] + c.channels[l] * c.channels[l + 1] + c.channels[l + 1];
        n += c.channels[l + 1] * c.channels[l] + c.channels[l];
    }
    return n + c.channels[0] * c.num_classes + c.num_classes;
}

}  // namespace swin3d::testing
