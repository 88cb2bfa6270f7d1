// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Per-window attention kernels on already-projected queries, keys and values.
//
// For head h with width d, pair (i, j) and signal difference s_i - s_j:
//
//   e_ij  = (q_i . k_j + q_i . tK_ij + k_j . tQ_ij) / sqrt(d)
//   out_i = sum_j softmax_j(e_ij) (v_j + tV_ij)
//
// where t*_ij is the sum over signal channels of the quantized table rows.
// Both engines subtract the row maximum before exponentiating. Logits and
// the table gather for a pair are evaluated in one loop body.
//
// Vanilla stores the N x N x heads coefficient array (MemoryTag::Coefficients)
// and reads it back in backward. Streaming keeps one log-sum-exp per row and
// head; backward recomputes each exponential once.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "swin3d/crse.hpp"
#include "swin3d/memory.hpp"

namespace swin3d::kernels {

template <class T>
struct TableView {
    std::size_t heads = 0;
    std::size_t head_dim = 0;
    std::vector<Quantizer> quantizers;
    // data[kind][channel] -> heads * L_l rows of head_dim values.
    std::array<std::vector<const T*>, 3> data;

    std::size_t channels() const noexcept { return quantizers.size(); }
};

template <class T>
struct TableGradView {
    std::array<std::vector<T*>, 3> data;
};

template <class T>
struct WindowView {
    std::size_t n = 0;
    std::size_t channels = 0;  // C = heads * head_dim
    std::size_t signal_channels = 0;
    const T* q = nullptr;  // n x C
    const T* k = nullptr;
    const T* v = nullptr;
    const double* signals = nullptr;  // n x m
};

namespace detail {

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) noexcept {
    T acc = 0;
    for (std::size_t c = 0; c < n; ++c) acc += a[c] * b[c];
    return acc;
}

// Quantized table indices of s_i - s_j, one per signal channel.
template <class T>
inline void pair_indices(const TableView<T>& tables, const double* si, const double* sj, int* idx) noexcept {
    for (std::size_t l = 0; l < tables.channels(); ++l) idx[l] = tables.quantizers[l].index(si[l] - sj[l]);
}

// out = sum_l table[kind][l][h, idx_l]
template <class T>
inline void gather(const TableView<T>& tables, std::size_t kind, std::size_t h, const int* idx,
                   T* out) noexcept {
    const std::size_t d = tables.head_dim;
    std::fill(out, out + d, T(0));
    for (std::size_t l = 0; l < tables.channels(); ++l) {
        const auto len = static_cast<std::size_t>(tables.quantizers[l].length);
        const T* row = tables.data[kind][l] + (h * len + static_cast<std::size_t>(idx[l])) * d;
        for (std::size_t c = 0; c < d; ++c) out[c] += row[c];
    }
}

template <class T>
inline void scatter(const TableView<T>& tables, TableGradView<T>& grads, std::size_t kind, std::size_t h,
                    const int* idx, const T* vec, T scale) noexcept {
    const std::size_t d = tables.head_dim;
    for (std::size_t l = 0; l < tables.channels(); ++l) {
        const auto len = static_cast<std::size_t>(tables.quantizers[l].length);
        T* row = grads.data[kind][l] + (h * len + static_cast<std::size_t>(idx[l])) * d;
        for (std::size_t c = 0; c < d; ++c) row[c] += scale * vec[c];
    }
}

// Scratch for one pair evaluation: indices plus the three gathered vectors.
template <class T>
struct PairScratch {
    explicit PairScratch(std::size_t m, std::size_t d) : idx(m), tq(d), tk(d), tv(d) {}
    TrackedVector<int> idx;
    TrackedVector<T> tq, tk, tv;
};

template <class T>
inline T pair_logit(const WindowView<T>& w, const TableView<T>& tables, std::size_t i, std::size_t j,
                    std::size_t h, PairScratch<T>& s, T scale) noexcept {
    const std::size_t d = tables.head_dim;
    const T* qi = w.q + i * w.channels + h * d;
    const T* kj = w.k + j * w.channels + h * d;
    gather(tables, 1, h, s.idx.data(), s.tk.data());
    gather(tables, 0, h, s.idx.data(), s.tq.data());
    return scale * (dot(qi, kj, d) + dot(qi, s.tk.data(), d) + dot(kj, s.tq.data(), d));
}

}  // namespace detail

// Coefficient layout: (i * heads + h) * n + j.
template <class T>
void forward_vanilla(const WindowView<T>& w, const TableView<T>& tables, T* out,
                     TrackedVector<T>& coefficients) {
    const std::size_t n = w.n, heads = tables.heads, d = tables.head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    {
        TagScope tag(MemoryTag::Coefficients);
        coefficients.assign(n * n * heads, T(0));
    }
    TagScope tag(MemoryTag::Workspace);
    detail::PairScratch<T> s(w.signal_channels, d);

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            detail::pair_indices(tables, w.signals + i * w.signal_channels, w.signals + j * w.signal_channels,
                                 s.idx.data());
            for (std::size_t h = 0; h < heads; ++h) {
                coefficients[(i * heads + h) * n + j] = detail::pair_logit(w, tables, i, j, h, s, scale);
            }
        }
    }
    for (std::size_t row = 0; row < n * heads; ++row) {
        T* e = coefficients.data() + row * n;
        const T mx = *std::max_element(e, e + n);
        T sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            e[j] = std::exp(e[j] - mx);
            sum += e[j];
        }
        for (std::size_t j = 0; j < n; ++j) e[j] /= sum;
    }
    std::fill(out, out + n * w.channels, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            detail::pair_indices(tables, w.signals + i * w.signal_channels, w.signals + j * w.signal_channels,
                                 s.idx.data());
            for (std::size_t h = 0; h < heads; ++h) {
                const T a = coefficients[(i * heads + h) * n + j];
                detail::gather(tables, 2, h, s.idx.data(), s.tv.data());
                const T* vj = w.v + j * w.channels + h * d;
                T* o = out + i * w.channels + h * d;
                for (std::size_t c = 0; c < d; ++c) o[c] += a * (vj[c] + s.tv[c]);
            }
        }
    }
}

// row_lse: n * heads entries, (i * heads + h), holding max + log(denominator).
template <class T>
void forward_streaming(const WindowView<T>& w, const TableView<T>& tables, T* out, TrackedVector<T>& row_lse) {
    const std::size_t n = w.n, heads = tables.heads, d = tables.head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    TagScope tag(MemoryTag::Workspace);
    row_lse.assign(n * heads, -std::numeric_limits<T>::infinity());
    TrackedVector<T> den(heads);
    detail::PairScratch<T> s(w.signal_channels, d);

    for (std::size_t i = 0; i < n; ++i) {
        const double* si = w.signals + i * w.signal_channels;
        T* mx = row_lse.data() + i * heads;
        // Pass 1: row maxima.
        for (std::size_t j = 0; j < n; ++j) {
            detail::pair_indices(tables, si, w.signals + j * w.signal_channels, s.idx.data());
            for (std::size_t h = 0; h < heads; ++h) {
                mx[h] = std::max(mx[h], detail::pair_logit(w, tables, i, j, h, s, scale));
            }
        }
        // Pass 2: numerator (accumulated straight into the output row) and denominator.
        std::fill(den.begin(), den.end(), T(0));
        T* acc = out + i * w.channels;
        std::fill(acc, acc + w.channels, T(0));
        for (std::size_t j = 0; j < n; ++j) {
            detail::pair_indices(tables, si, w.signals + j * w.signal_channels, s.idx.data());
            for (std::size_t h = 0; h < heads; ++h) {
                const T p = std::exp(detail::pair_logit(w, tables, i, j, h, s, scale) - mx[h]);
                den[h] += p;
                detail::gather(tables, 2, h, s.idx.data(), s.tv.data());
                const T* vj = w.v + j * w.channels + h * d;
                T* a = acc + h * d;
                for (std::size_t c = 0; c < d; ++c) a[c] += p * (vj[c] + s.tv[c]);
            }
        }
        for (std::size_t h = 0; h < heads; ++h) {
            T* a = acc + h * d;
            for (std::size_t c = 0; c < d; ++c) a[c] /= den[h];
            mx[h] += std::log(den[h]);
        }
    }
}

// delta[i * heads + h] = g_i . out_i over head h's channels.
template <class T>
void row_deltas(const T* upstream, const T* out, std::size_t n, std::size_t heads, std::size_t head_dim,
                TrackedVector<T>& delta) {
    TagScope tag(MemoryTag::Workspace);
    delta.resize(n * heads);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = i * heads * head_dim + h * head_dim;
            delta[i * heads + h] = detail::dot(upstream + off, out + off, head_dim);
        }
}

// Gradients are accumulated (+=) into dq, dk, dv (n x C each) and the table grads.
template <class T>
void backward_vanilla(const WindowView<T>& w, const TableView<T>& tables, const TrackedVector<T>& coefficients,
                      const T* upstream, T* dq, T* dk, T* dv, TableGradView<T>& grads) {
    const std::size_t n = w.n, heads = tables.heads, d = tables.head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    TagScope tag(MemoryTag::Workspace);
    detail::PairScratch<T> s(w.signal_channels, d);
    TrackedVector<T> dalpha(n * heads);
    TrackedVector<T> weighted(heads);

    for (std::size_t i = 0; i < n; ++i) {
        const double* si = w.signals + i * w.signal_channels;
        const T* gi = upstream + i * w.channels;
        // dalpha_ij = g_i . (v_j + tV_ij)
        for (std::size_t j = 0; j < n; ++j) {
            detail::pair_indices(tables, si, w.signals + j * w.signal_channels, s.idx.data());
            for (std::size_t h = 0; h < heads; ++h) {
                detail::gather(tables, 2, h, s.idx.data(), s.tv.data());
                const T* vj = w.v + j * w.channels + h * d;
                T acc = 0;
                for (std::size_t c = 0; c < d; ++c) acc += gi[h * d + c] * (vj[c] + s.tv[c]);
                dalpha[j * heads + h] = acc;
            }
        }
        for (std::size_t h = 0; h < heads; ++h) {
            const T* a = coefficients.data() + (i * heads + h) * n;
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += a[j] * dalpha[j * heads + h];
            weighted[h] = acc;
        }
        for (std::size_t j = 0; j < n; ++j) {
            detail::pair_indices(tables, si, w.signals + j * w.signal_channels, s.idx.data());
            for (std::size_t h = 0; h < heads; ++h) {
                const T a = coefficients[(i * heads + h) * n + j];
                const T de = a * (dalpha[j * heads + h] - weighted[h]) * scale;
                const T* ghead = gi + h * d;
                const T* qi = w.q + i * w.channels + h * d;
                const T* kj = w.k + j * w.channels + h * d;
                T* dvj = dv + j * w.channels + h * d;
                T* dqi = dq + i * w.channels + h * d;
                T* dkj = dk + j * w.channels + h * d;
                detail::gather(tables, 0, h, s.idx.data(), s.tq.data());
                detail::gather(tables, 1, h, s.idx.data(), s.tk.data());
                for (std::size_t c = 0; c < d; ++c) {
                    dvj[c] += a * ghead[c];
                    dqi[c] += de * (kj[c] + s.tk[c]);
                    dkj[c] += de * (qi[c] + s.tq[c]);
                }
                detail::scatter(tables, grads, 2, h, s.idx.data(), ghead, a);
                detail::scatter(tables, grads, 1, h, s.idx.data(), qi, de);
                detail::scatter(tables, grads, 0, h, s.idx.data(), kj, de);
            }
        }
    }
}

// `delta` comes from row_deltas on the forward output; g_i . out_i equals
// sum_j alpha_ij dalpha_ij, so each exponential is evaluated once here.
template <class T>
void backward_streaming(const WindowView<T>& w, const TableView<T>& tables, const TrackedVector<T>& delta,
                        const TrackedVector<T>& row_lse, const T* upstream, T* dq, T* dk, T* dv,
                        TableGradView<T>& grads) {
    const std::size_t n = w.n, heads = tables.heads, d = tables.head_dim;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    TagScope tag(MemoryTag::Workspace);
    detail::PairScratch<T> s(w.signal_channels, d);

    for (std::size_t i = 0; i < n; ++i) {
        const double* si = w.signals + i * w.signal_channels;
        const T* gi = upstream + i * w.channels;
        for (std::size_t j = 0; j < n; ++j) {
            detail::pair_indices(tables, si, w.signals + j * w.signal_channels, s.idx.data());
            for (std::size_t h = 0; h < heads; ++h) {
                const T e = detail::pair_logit(w, tables, i, j, h, s, scale);
                const T a = std::exp(e - row_lse[i * heads + h]);
                detail::gather(tables, 2, h, s.idx.data(), s.tv.data());
                const T* ghead = gi + h * d;
                const T* qi = w.q + i * w.channels + h * d;
                const T* kj = w.k + j * w.channels + h * d;
                const T* vj = w.v + j * w.channels + h * d;
                T dalpha = 0;
                for (std::size_t c = 0; c < d; ++c) dalpha += ghead[c] * (vj[c] + s.tv[c]);
                const T de = a * (dalpha - delta[i * heads + h]) * scale;
                T* dvj = dv + j * w.channels + h * d;
                T* dqi = dq + i * w.channels + h * d;
                T* dkj = dk + j * w.channels + h * d;
                for (std::size_t c = 0; c < d; ++c) {
                    dvj[c] += a * ghead[c];
                    dqi[c] += de * (kj[c] + s.tk[c]);
                    dkj[c] += de * (qi[c] + s.tq[c]);
                }
                detail::scatter(tables, grads, 2, h, s.idx.data(), ghead, a);
                detail::scatter(tables, grads, 1, h, s.idx.data(), qi, de);
                detail::scatter(tables, grads, 0, h, s.idx.data(), kj, de);
            }
        }
    }
}

}  // namespace swin3d::kernels
