// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Contextual relative signal encoding: learnable look-up tables indexed by
// quantized per-channel signal differences between two voxels.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "swin3d/autodiff.hpp"
#include "swin3d/point_cloud.hpp"

namespace swin3d {

enum class TableKind : std::size_t { Query = 0, Key = 1, Value = 2 };
inline constexpr std::array<TableKind, 3> kTableKinds = {TableKind::Query, TableKind::Key,
                                                         TableKind::Value};

inline constexpr int kPositionTableLength = 4;
inline constexpr int kSignalTableLength = 16;

int default_table_length(SignalKind kind);

struct Quantizer {
    double quat = 2.0;      // quantization range
    double minquat = -1.0;  // lower bound of the signal difference
    int length = kSignalTableLength;

    // floor((delta - minquat) * length / quat), clamped into [0, length - 1].
    int index(double delta) const noexcept;
};

// Position channels span [-h, h] for window height h; color and normal
// channels span [-1, 1].
Quantizer make_quantizer(SignalKind kind, double window_height, int length);

class CrseTables {
public:
    CrseTables() = default;
    // Tables start at zero, which makes the encoding inert until trained.
    CrseTables(const std::string& prefix, std::span<const SignalKind> layout, std::size_t heads,
               std::size_t head_dim, double window_height);
    CrseTables(const std::string& prefix, std::span<const SignalKind> layout, std::size_t heads,
               std::size_t head_dim, double window_height, std::span<const int> lengths);

    std::size_t channels() const noexcept { return quantizers_.size(); }
    std::size_t heads() const noexcept { return heads_; }
    std::size_t head_dim() const noexcept { return head_dim_; }
    double window_height() const noexcept { return window_height_; }
    const Quantizer& quantizer(std::size_t channel) const { return quantizers_.at(channel); }

    // Shape {heads * L_l, head_dim}; row h * L_l + i holds entry i of head h.
    Parameter& table(TableKind kind, std::size_t channel) {
        return tables_[static_cast<std::size_t>(kind)].at(channel);
    }
    const Parameter& table(TableKind kind, std::size_t channel) const {
        return tables_[static_cast<std::size_t>(kind)].at(channel);
    }

    // 3 * sum_l L_l * heads * head_dim.
    std::size_t parameter_count() const noexcept;

    void quantize(std::span<const double> delta, std::span<int> indices) const;

    // out = sum_l t^kind_{l,head}[I_l(delta)], out has head_dim entries.
    void embed(std::span<const double> delta, std::size_t head, TableKind kind,
               std::span<double> out) const;

    void visit(const ParameterVisitor& fn);

private:
    std::size_t heads_ = 0;
    std::size_t head_dim_ = 0;
    double window_height_ = 0.0;
    std::vector<Quantizer> quantizers_;
    std::array<std::vector<Parameter>, 3> tables_;
};

}  // namespace swin3d
