// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "swin3d/tensor.hpp"

namespace swin3d {

inline constexpr std::uint64_t kDefaultSeed = 20230525;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Seed of a named sub-stream ("voxelize", "init", "sampler", ...): FNV-1a of
// the name folded into the root seed through mix64.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char ch : stream) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001B3ULL;
    }
    return mix64(root ^ mix64(h));
}

using Rng = std::mt19937_64;

// Normal(0, std) samples redrawn until they fall inside +-2 std.
void fill_truncated_normal(Tensor& t, Rng& rng, double stddev);
void fill_uniform(Tensor& t, Rng& rng, double lo, double hi);
double uniform(Rng& rng, double lo, double hi);

}  // namespace swin3d
