// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/crse.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "swin3d/errors.hpp"

namespace swin3d {

int default_table_length(SignalKind kind) {
    return kind == SignalKind::Position ? kPositionTableLength : kSignalTableLength;
}

int Quantizer::index(double delta) const noexcept {
    const double raw = std::floor((delta - minquat) * static_cast<double>(length) / quat);
    if (!(raw >= 0.0)) return 0;  // also catches NaN
    if (raw >= static_cast<double>(length - 1)) return length - 1;
    return static_cast<int>(raw);
}

Quantizer make_quantizer(SignalKind kind, double window_height, int length) {
    if (length < 1) throw InputError("quantizer length must be positive");
    if (kind == SignalKind::Position) {
        if (!(window_height > 0.0)) throw InputError("position quantizer needs a positive window height");
        return Quantizer{2.0 * window_height, -window_height, length};
    }
    return Quantizer{2.0, -1.0, length};
}

namespace {

constexpr const char* kKindNames[3] = {"q", "k", "v"};

std::vector<int> default_lengths(std::span<const SignalKind> layout) {
    std::vector<int> lengths;
    for (auto k : layout) lengths.push_back(default_table_length(k));
    return lengths;
}

}  // namespace

CrseTables::CrseTables(const std::string& prefix, std::span<const SignalKind> layout, std::size_t heads,
                       std::size_t head_dim, double window_height)
    : CrseTables(prefix, layout, heads, head_dim, window_height, default_lengths(layout)) {}

CrseTables::CrseTables(const std::string& prefix, std::span<const SignalKind> layout, std::size_t heads,
                       std::size_t head_dim, double window_height, std::span<const int> lengths)
    : heads_(heads), head_dim_(head_dim), window_height_(window_height) {
    if (lengths.size() != layout.size()) throw DimensionError("cRSE: one table length per channel");
    if (heads == 0 || head_dim == 0) throw InputError("cRSE: heads and head width must be positive");
    for (std::size_t l = 0; l < layout.size(); ++l) {
        quantizers_.push_back(make_quantizer(layout[l], window_height, lengths[l]));
    }
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t l = 0; l < layout.size(); ++l) {
            const auto len = static_cast<std::size_t>(lengths[l]);
            tables_[k].emplace_back(fmt::format("{}.table_{}.{}", prefix, kKindNames[k], l),
                                    Tensor::matrix(heads * len, head_dim));
        }
    }
}

std::size_t CrseTables::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& kind : tables_)
        for (const auto& p : kind) n += p.value.size();
    return n;
}

void CrseTables::quantize(std::span<const double> delta, std::span<int> indices) const {
    for (std::size_t l = 0; l < quantizers_.size(); ++l) indices[l] = quantizers_[l].index(delta[l]);
}

void CrseTables::embed(std::span<const double> delta, std::size_t head, TableKind kind,
                       std::span<double> out) const {
    if (delta.size() != channels() || out.size() != head_dim_ || head >= heads_) {
        throw DimensionError("cRSE embed: argument sizes do not match the tables");
    }
    std::fill(out.begin(), out.end(), 0.0);
    const auto& tabs = tables_[static_cast<std::size_t>(kind)];
    for (std::size_t l = 0; l < quantizers_.size(); ++l) {
        const auto len = static_cast<std::size_t>(quantizers_[l].length);
        const std::size_t row = head * len + static_cast<std::size_t>(quantizers_[l].index(delta[l]));
        auto entry = tabs[l].value.row(row);
        for (std::size_t c = 0; c < head_dim_; ++c) out[c] += entry[c];
    }
}

void CrseTables::visit(const ParameterVisitor& fn) {
    for (auto& kind : tables_)
        for (auto& p : kind) fn(p);
}

}  // namespace swin3d
