// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/point_cloud.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "swin3d/errors.hpp"

namespace swin3d {

namespace {

constexpr char kBinaryMagic[5] = {'S', 'V', 'P', 'C', '1'};

void check_channels(std::size_t m) {
    if (m != 6 && m != 9) {
        throw InputError(fmt::format("point cloud must have 6 or 9 channels, got {}", m));
    }
}

// Empty string when valid, else the reason.
std::string validate_signal(std::span<const double> s) {
    for (std::size_t c = 0; c < s.size(); ++c) {
        if (!std::isfinite(s[c])) return fmt::format("channel {} is not finite", c + 1);
        if (c >= 3 && (s[c] < -1.0 || s[c] > 1.0)) {
            return fmt::format("channel {} value {} outside [-1, 1]", c + 1, s[c]);
        }
    }
    return {};
}

template <class T>
void write_le(std::ostream& out, T value) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& in, const char* what) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw ParseError(fmt::format("binary point cloud truncated while reading {}", what), 0);
    }
    return value;
}

}  // namespace

std::vector<SignalKind> signal_layout(std::size_t channels) {
    check_channels(channels);
    std::vector<SignalKind> kinds(channels, SignalKind::Color);
    for (std::size_t c = 0; c < 3; ++c) kinds[c] = SignalKind::Position;
    for (std::size_t c = 6; c < channels; ++c) kinds[c] = SignalKind::Normal;
    return kinds;
}

PointCloud::PointCloud(std::size_t channels) : channels_(channels) { check_channels(channels); }

void PointCloud::add(std::span<const double> signal) {
    if (signal.size() != channels_) {
        throw DimensionError(
            fmt::format("point has {} channels, cloud expects {}", signal.size(), channels_));
    }
    if (auto why = validate_signal(signal); !why.empty()) throw InputError(why);
    values_.insert(values_.end(), signal.begin(), signal.end());
}

PointCloud read_point_cloud_text(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::size_t channels = 0;
    PointCloud pc;
    std::vector<double> row;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        row.clear();
        std::istringstream fields(line);
        std::string token;
        while (fields >> token) {
            double v = 0.0;
            std::size_t used = 0;
            try {
                v = std::stod(token, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != token.size()) {
                throw ParseError(fmt::format("line {}: '{}' is not a number", line_no, token), line_no);
            }
            row.push_back(v);
        }
        if (row.size() != 6 && row.size() != 9) {
            throw ParseError(
                fmt::format("line {}: expected 6 or 9 values, found {}", line_no, row.size()), line_no);
        }
        if (channels == 0) {
            channels = row.size();
            pc = PointCloud(channels);
        } else if (row.size() != channels) {
            throw ParseError(fmt::format("line {}: expected {} values like earlier lines, found {}",
                                         line_no, channels, row.size()),
                             line_no);
        }
        if (auto why = validate_signal(row); !why.empty()) {
            throw ParseError(fmt::format("line {}: {}", line_no, why), line_no);
        }
        pc.add(row);
    }
    return pc;
}

void write_point_cloud_text(std::ostream& out, const PointCloud& pc) {
    for (std::size_t i = 0; i < pc.size(); ++i) {
        auto s = pc.signal(i);
        for (std::size_t c = 0; c < s.size(); ++c) out << (c ? " " : "") << fmt::format("{}", s[c]);
        out << '\n';
    }
}

PointCloud read_point_cloud_binary(std::istream& in) {
    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, kBinaryMagic, 5) != 0) {
        throw ParseError("binary point cloud: missing SVPC1 header", 0);
    }
    const auto count = read_le<std::uint32_t>(in, "point count");
    const auto m = read_le<std::uint32_t>(in, "channel count");
    if (m != 6 && m != 9) {
        throw ParseError(fmt::format("binary point cloud: unsupported channel count {}", m), 0);
    }
    PointCloud pc(m);
    pc.reserve(count);
    std::vector<double> row(m);
    for (std::uint32_t i = 0; i < count; ++i) {
        for (std::uint32_t c = 0; c < m; ++c) row[c] = read_le<float>(in, "point data");
        if (auto why = validate_signal(row); !why.empty()) {
            throw ParseError(fmt::format("binary point cloud: point {}: {}", i, why), 0);
        }
        pc.add(row);
    }
    return pc;
}

void write_point_cloud_binary(std::ostream& out, const PointCloud& pc) {
    out.write(kBinaryMagic, 5);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(pc.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(pc.channels()));
    for (double v : pc.values()) write_le<float>(out, static_cast<float>(v));
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(fmt::format("cannot open '{}'", path.string()));
    char head[5] = {};
    in.read(head, 5);
    const bool binary = in.gcount() == 5 && std::memcmp(head, kBinaryMagic, 5) == 0;
    in.clear();
    in.seekg(0);
    return binary ? read_point_cloud_binary(in) : read_point_cloud_text(in);
}

}  // namespace swin3d
