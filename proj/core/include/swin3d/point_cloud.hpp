// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace swin3d {

enum class SignalKind { Position, Color, Normal };

// Channel layout for m signal channels: xyz, rgb, and optionally normals.
std::vector<SignalKind> signal_layout(std::size_t channels);

// Points with m signal channels each. The first three channels are the
// position in meters; the rest are color (and normal) components in [-1, 1].
class PointCloud {
public:
    explicit PointCloud(std::size_t channels = 6);

    std::size_t channels() const noexcept { return channels_; }
    std::size_t size() const noexcept { return values_.size() / channels_; }
    bool empty() const noexcept { return values_.empty(); }

    void add(std::span<const double> signal);
    void reserve(std::size_t n) { values_.reserve(n * channels_); }

    std::span<const double> signal(std::size_t i) const noexcept {
        return {values_.data() + i * channels_, channels_};
    }
    std::array<double, 3> position(std::size_t i) const noexcept {
        const double* p = values_.data() + i * channels_;
        return {p[0], p[1], p[2]};
    }
    std::span<const double> values() const noexcept { return values_; }

    friend bool operator==(const PointCloud&, const PointCloud&) = default;

private:
    std::size_t channels_;
    std::vector<double> values_;
};

// Text: one point per line, "x y z r g b [nx ny nz]", '#' starts a comment line.
PointCloud read_point_cloud_text(std::istream& in);
void write_point_cloud_text(std::ostream& out, const PointCloud& pc);

// Binary: "SVPC1", uint32 count, uint32 m, count*m float32, little-endian.
PointCloud read_point_cloud_binary(std::istream& in);
void write_point_cloud_binary(std::ostream& out, const PointCloud& pc);

// Dispatches on the leading magic bytes.
PointCloud read_point_cloud(const std::filesystem::path& path);

}  // namespace swin3d
