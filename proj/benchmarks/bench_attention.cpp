// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Per-window kernel throughput of the two engines, in double and float.
// Run with --benchmark_counters_tabular=true to see the retained bytes.

#include <benchmark/benchmark.h>

#include <vector>

#include "swin3d/attention.hpp"
#include "swin3d/attention_kernels.hpp"
#include "swin3d/random.hpp"

namespace {

using namespace swin3d;

constexpr std::size_t kChannels = 32;
constexpr double kWindowHeight = 0.14;

template <class T>
struct Fixture {
    Fixture(std::size_t n, std::size_t heads, std::size_t m)
        : params("bench", kChannels, heads, signal_layout(m), kWindowHeight) {
        Rng rng(derive_seed(kDefaultSeed, "bench"));
        auto fill = [&](std::vector<T>& dst, std::size_t count) {
            dst.resize(count);
            for (auto& x : dst) x = static_cast<T>(uniform(rng, -0.5, 0.5));
        };
        fill(q, n * kChannels);
        fill(k, n * kChannels);
        fill(v, n * kChannels);
        fill(upstream, n * kChannels);
        signals.resize(n * m);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < 3; ++c) signals[i * m + c] = uniform(rng, 0.0, kWindowHeight);
            for (std::size_t c = 3; c < m; ++c) signals[i * m + c] = uniform(rng, -1.0, 1.0);
        }
        tables.heads = heads;
        tables.head_dim = kChannels / heads;
        for (std::size_t l = 0; l < m; ++l) tables.quantizers.push_back(params.tables.quantizer(l));
        for (auto kind : kTableKinds) {
            const auto ki = static_cast<std::size_t>(kind);
            for (std::size_t l = 0; l < m; ++l) {
                auto& store = table_store[ki].emplace_back();
                fill(store, params.tables.table(kind, l).value.size());
                tables.data[ki].push_back(store.data());
                auto& gstore = grad_store[ki].emplace_back(store.size(), T(0));
                grads.data[ki].push_back(gstore.data());
            }
        }
        window = {n, kChannels, m, q.data(), k.data(), v.data(), signals.data()};
        out.resize(n * kChannels);
        dq.resize(n * kChannels);
        dk.resize(n * kChannels);
        dv.resize(n * kChannels);
    }

    AttentionParams params;
    std::vector<T> q, k, v, upstream, out, dq, dk, dv;
    std::vector<double> signals;
    std::array<std::vector<std::vector<T>>, 3> table_store, grad_store;
    kernels::TableView<T> tables;
    kernels::TableGradView<T> grads;
    kernels::WindowView<T> window;
};

template <class T>
void BM_VanillaForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0)), heads = static_cast<std::size_t>(state.range(1));
    Fixture<T> f(n, heads, 6);
    TrackedVector<T> coefficients;
    for (auto _ : state) {
        kernels::forward_vanilla(f.window, f.tables, f.out.data(), coefficients);
        benchmark::DoNotOptimize(f.out.data());
    }
    state.counters["retained_bytes"] = static_cast<double>(coefficients.size() * sizeof(T));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * heads));
}

template <class T>
void BM_StreamingForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0)), heads = static_cast<std::size_t>(state.range(1));
    Fixture<T> f(n, heads, 6);
    TrackedVector<T> lse;
    for (auto _ : state) {
        kernels::forward_streaming(f.window, f.tables, f.out.data(), lse);
        benchmark::DoNotOptimize(f.out.data());
    }
    state.counters["retained_bytes"] = static_cast<double>(lse.size() * sizeof(T));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * heads));
}

template <class T>
void BM_VanillaForwardBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0)), heads = static_cast<std::size_t>(state.range(1));
    Fixture<T> f(n, heads, 6);
    TrackedVector<T> coefficients;
    for (auto _ : state) {
        kernels::forward_vanilla(f.window, f.tables, f.out.data(), coefficients);
        kernels::backward_vanilla(f.window, f.tables, coefficients, f.upstream.data(), f.dq.data(), f.dk.data(),
                                  f.dv.data(), f.grads);
        benchmark::DoNotOptimize(f.dq.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * heads));
}

template <class T>
void BM_StreamingForwardBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0)), heads = static_cast<std::size_t>(state.range(1));
    Fixture<T> f(n, heads, 6);
    TrackedVector<T> lse, delta;
    for (auto _ : state) {
        kernels::forward_streaming(f.window, f.tables, f.out.data(), lse);
        kernels::row_deltas(f.upstream.data(), f.out.data(), n, heads, kChannels / heads, delta);
        kernels::backward_streaming(f.window, f.tables, delta, lse, f.upstream.data(), f.dq.data(), f.dk.data(),
                                    f.dv.data(), f.grads);
        benchmark::DoNotOptimize(f.dq.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * heads));
}

void window_args(benchmark::internal::Benchmark* b) {
    for (int n : {16, 64, 256})
        for (int h : {1, 4}) b->Args({n, h});
}

BENCHMARK_TEMPLATE(BM_VanillaForward, double)->Apply(window_args);
BENCHMARK_TEMPLATE(BM_StreamingForward, double)->Apply(window_args);
BENCHMARK_TEMPLATE(BM_VanillaForward, float)->Apply(window_args);
BENCHMARK_TEMPLATE(BM_StreamingForward, float)->Apply(window_args);
BENCHMARK_TEMPLATE(BM_VanillaForwardBackward, double)->Apply(window_args);
BENCHMARK_TEMPLATE(BM_StreamingForwardBackward, double)->Apply(window_args);
BENCHMARK_TEMPLATE(BM_VanillaForwardBackward, float)->Apply(window_args);
BENCHMARK_TEMPLATE(BM_StreamingForwardBackward, float)->Apply(window_args);

}  // namespace

BENCHMARK_MAIN();
