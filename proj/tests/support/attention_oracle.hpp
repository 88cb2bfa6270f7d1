// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Direct transcription of the attention formulas, written without any of the
// library's kernels: per-pair gathers, explicit softmax, plain loops.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "swin3d/attention.hpp"

namespace swin3d::testing {

inline int naive_index(double delta, double quat, double minquat, int length) {
    int i = static_cast<int>(std::floor((delta - minquat) * length / quat));
    return std::min(std::max(i, 0), length - 1);
}

// sum over channels of table[kind][l] row (h, I_l(delta)).
inline std::vector<double> naive_embed(const CrseTables& tables, const std::vector<double>& delta, std::size_t h,
                                       TableKind kind) {
    std::vector<double> out(tables.head_dim(), 0.0);
    for (std::size_t l = 0; l < tables.channels(); ++l) {
        const auto& qz = tables.quantizer(l);
        const int idx = naive_index(delta[l], qz.quat, qz.minquat, qz.length);
        const Tensor& t = tables.table(kind, l).value;
        for (std::size_t c = 0; c < tables.head_dim(); ++c) {
            out[c] += t(h * static_cast<std::size_t>(qz.length) + static_cast<std::size_t>(idx), c);
        }
    }
    return out;
}

inline Tensor naive_attention(const WindowBatch& batch, const AttentionParams& params) {
    const std::size_t n = batch.features.rows(), c = params.channels, heads = params.heads,
                      d = params.head_dim(), m = batch.signals.cols();
    auto project = [&](const Tensor& w) {
        Tensor out = Tensor::matrix(n, c);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < c; ++o) {
                double acc = 0.0;
                for (std::size_t p = 0; p < c; ++p) acc += batch.features(i, p) * w(p, o);
                out(i, o) = acc;
            }
        return out;
    };
    const Tensor q = project(params.q.value), k = project(params.k.value), v = project(params.v.value);
    Tensor out = Tensor::matrix(n, c);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> logits(n);
            std::vector<std::vector<double>> values(n);
            for (std::size_t j = 0; j < n; ++j) {
                std::vector<double> delta(m);
                for (std::size_t l = 0; l < m; ++l) delta[l] = batch.signals(i, l) - batch.signals(j, l);
                auto tq = naive_embed(params.tables, delta, h, TableKind::Query);
                auto tk = naive_embed(params.tables, delta, h, TableKind::Key);
                auto tv = naive_embed(params.tables, delta, h, TableKind::Value);
                double qk = 0.0, bias = 0.0;
                for (std::size_t x = 0; x < d; ++x) {
                    qk += q(i, h * d + x) * k(j, h * d + x);
                    bias += q(i, h * d + x) * tk[x] + k(j, h * d + x) * tq[x];
                }
                logits[j] = (qk + bias) / std::sqrt(static_cast<double>(d));
                values[j].resize(d);
                for (std::size_t x = 0; x < d; ++x) values[j][x] = v(j, h * d + x) + tv[x];
            }
            const double mx = *std::max_element(logits.begin(), logits.end());
            double z = 0.0;
            for (auto& e : logits) z += std::exp(e - mx);
            for (std::size_t j = 0; j < n; ++j) {
                const double a = std::exp(logits[j] - mx) / z;
                for (std::size_t x = 0; x < d; ++x) out(i, h * d + x) += a * values[j][x];
            }
        }
    }
    return out;
}

}  // namespace swin3d::testing
