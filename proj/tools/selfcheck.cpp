// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <tuple>

#include <fmt/format.h>

#include "cli.hpp"
#include "swin3d/backbone.hpp"
#include "swin3d/gradcheck.hpp"
#include "swin3d/voxel_grid.hpp"

namespace swin3d::cli {
namespace {

constexpr double kEquivalenceTolerance = 1e-10;
constexpr double kGradTolerance = 1e-4;
constexpr double kModelGradTolerance = 1e-3;

PointCloud random_cloud(std::size_t n, double extent, std::size_t channels, Rng& rng) {
    PointCloud pc(channels);
    std::vector<double> row(channels);
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) row[k] = uniform(rng, 0.0, extent);
        for (std::size_t k = 3; k < channels; ++k) row[k] = uniform(rng, -1.0, 1.0);
        pc.add(row);
    }
    return pc;
}

void randomize(AttentionParams& params, Rng& rng, double table_scale) {
    fill_uniform(params.q.value, rng, -0.5, 0.5);
    fill_uniform(params.k.value, rng, -0.5, 0.5);
    fill_uniform(params.v.value, rng, -0.5, 0.5);
    params.tables.visit([&](Parameter& p) { fill_uniform(p.value, rng, -table_scale, table_scale); });
}

CheckResult engine_equivalence(const SelfcheckOptions& o) {
    Rng rng(derive_seed(o.seed, "selfcheck.equivalence"));
    constexpr std::array<std::size_t, 4> kHeads{1, 2, 4, 8};
    double worst = 0.0;
    for (std::size_t w = 0; w < o.windows; ++w) {
        const std::size_t n = 1 + w % 64;
        const std::size_t heads = kHeads[w % 4];
        const std::size_t m = (w / 4) % 2 == 0 ? 6 : 9;
        const std::size_t channels = heads * (1 + w % 3);
        const double h = 0.14;
        AttentionParams params("attn", channels, heads, signal_layout(m), h);
        randomize(params, rng, 0.5);
        WindowBatch batch{Tensor::matrix(n, channels), Tensor::matrix(n, m)};
        fill_uniform(batch.features, rng, -1.0, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < 3; ++k) batch.signals(i, k) = 1.0 + uniform(rng, 0.0, h);
            for (std::size_t k = 3; k < m; ++k) batch.signals(i, k) = uniform(rng, -1.0, 1.0);
        }
        const Tensor a = attention_vanilla(batch, params);
        const Tensor b = attention_streaming(batch, params);
        if (!a.all_finite() || !b.all_finite()) return {"engine-equivalence", false, fmt::format("window {} non-finite", w)};
        worst = std::max(worst, relative_error_inf(b, a));
    }
    return {"engine-equivalence", worst <= kEquivalenceTolerance,
            fmt::format("windows={} max_rel_diff={:.3e}", o.windows, worst)};
}

CheckResult attention_gradient(const SelfcheckOptions& o) {
    Rng rng(derive_seed(o.seed, "selfcheck.attention"));
    const auto level = voxelize(random_cloud(14, 0.1, 9, rng), 0.02, derive_seed(o.seed, "voxelize"));
    const auto signals = level_signals(level);
    const auto partition = partition_windows(level, 3, false);
    AttentionParams params("attn", 4, 2, signal_layout(9), partition.window_height);
    randomize(params, rng, 0.3);
    Parameter x("x", Tensor::matrix(level.size(), 4));
    fill_uniform(x.value, rng, -1.0, 1.0);
    Tensor r = Tensor::matrix(level.size(), 4);
    fill_uniform(r, rng, -1.0, 1.0);

    std::vector<Parameter*> ps{&x};
    params.visit([&](Parameter& p) { ps.push_back(&p); });
    Parameter* target = nullptr;
    params.tables.visit([&](Parameter& p) {
        if (target == nullptr) target = &p;
    });
    GradCheckOptions opts;
    opts.seed = o.seed;
    if (o.inject_fault) opts.after_backward = [&] { target->grad[0] += 1.0; };
    const auto report = gradcheck(ps, [&](Tape& t) {
        return weighted_sum(t, windowed_attention(t, t.param(x), signals, partition, params, {AttentionEngine::Streaming, o.threads}), r);
    }, opts);
    return {"attention-gradient", report.max_rel_error < kGradTolerance,
            fmt::format("checked={} max_rel_err={:.3e}", report.checked, report.max_rel_error)};
}

CheckResult block_gradient(const SelfcheckOptions& o) {
    Rng rng(derive_seed(o.seed, "selfcheck.block"));
    const auto level = voxelize(random_cloud(40, 0.12, 6, rng), 0.02, derive_seed(o.seed, "voxelize"));
    const auto signals = level_signals(level);
    BackboneConfig config;
    config.channels = {4};
    config.heads = {2};
    config.depths = {2};
    config.window_sizes = {3};
    config.strides = {};
    config.finest_voxel_size = 0.02;
    Backbone model(config, derive_seed(o.seed, "init"));
    const auto regular = partition_windows(level, 3, false);
    const auto shifted = partition_windows(level, 3, true);
    std::vector<Parameter*> ps;
    for (auto& b : model.blocks[0]) {
        b.attention.tables.visit([&](Parameter& p) { fill_uniform(p.value, rng, -0.2, 0.2); });
        b.visit([&](Parameter& p) { ps.push_back(&p); });
    }
    Parameter x("x", Tensor::matrix(level.size(), 4));
    fill_uniform(x.value, rng, -1.0, 1.0);
    ps.push_back(&x);
    Tensor r = Tensor::matrix(level.size(), 4);
    fill_uniform(r, rng, -1.0, 1.0);
    GradCheckOptions opts;
    opts.seed = o.seed;
    const auto report = gradcheck(ps, [&](Tape& t) {
        Var h = t.param(x);
        h = swin_block(t, h, signals, regular, model.blocks[0][0], {AttentionEngine::Vanilla, o.threads});
        h = swin_block(t, h, signals, shifted, model.blocks[0][1], {AttentionEngine::Streaming, o.threads});
        return weighted_sum(t, h, r);
    }, opts);
    return {"block-gradient", report.max_rel_error < kGradTolerance,
            fmt::format("checked={} max_rel_err={:.3e}", report.checked, report.max_rel_error)};
}

CheckResult model_gradient(const SelfcheckOptions& o) {
    auto config = backbone_preset("toy");
    config.finest_voxel_size = 0.1;
    Backbone model(config, derive_seed(o.seed, "init"));
    Rng rng(derive_seed(o.seed, "selfcheck.model"));
    model.visit([&](Parameter& p) {
        if (p.name.find(".table_") != std::string::npos) fill_uniform(p.value, rng, -0.2, 0.2);
    });
    const auto data = make_separable_dataset(1, 60, o.seed);
    const auto scene = prepare_labeled_scene(data[0], config, o.seed);
    std::vector<Parameter*> ps;
    model.visit([&](Parameter& p) { ps.push_back(&p); });
    GradCheckOptions opts;
    opts.fraction = 0.01;
    opts.seed = o.seed;
    const ForwardOptions fwd{AttentionEngine::Streaming, o.threads};
    const auto report = gradcheck(ps, [&](Tape& t) {
        return softmax_cross_entropy(t, decode_segmentation(t, scene, encode(t, scene, model, fwd), model),
                                     scene.labels);
    }, opts);
    return {"model-gradient", report.max_rel_error < kModelGradTolerance,
            fmt::format("checked={} max_rel_err={:.3e}", report.checked, report.max_rel_error)};
}

SparseVoxelLevel random_grid(std::size_t g, Rng& rng, std::uint64_t seed) {
    std::uniform_int_distribution<std::size_t> count(1, 300);
    return voxelize(random_cloud(count(rng), 1.0, 6, rng), 0.1, derive_seed(seed, fmt::format("grid{}", g)));
}

CheckResult partition_coverage(const SelfcheckOptions& o) {
    Rng rng(derive_seed(o.seed, "selfcheck.partition"));
    std::uniform_int_distribution<int> window(1, 7);
    for (std::size_t g = 0; g < o.grids; ++g) {
        const auto level = random_grid(g, rng, o.seed);
        const int m = window(rng);
        for (bool shifted : {false, true}) {
            const auto part = partition_windows(level, m, shifted);
            const std::int64_t offset = shifted ? m / 2 : 0;
            std::vector<int> hits(level.size(), 0);
            for (const auto& w : part.windows) {
                for (auto i : w.members) {
                    ++hits.at(i);
                    for (int a = 0; a < 3; ++a) {
                        if (floor_div(level[i].coord[a] + offset, m) != w.coord[a]) {
                            return {"partition-coverage", false,
                                    fmt::format("grid {} M={}: voxel {} in the wrong window", g, m, i)};
                        }
                    }
                }
            }
            if (std::any_of(hits.begin(), hits.end(), [](int h) { return h != 1; })) {
                return {"partition-coverage", false, fmt::format("grid {} M={}: coverage is not exact", g, m)};
            }
        }
    }
    return {"partition-coverage", true, fmt::format("grids={}", o.grids)};
}

CheckResult hierarchy_representatives(const SelfcheckOptions& o) {
    Rng rng(derive_seed(o.seed, "selfcheck.hierarchy"));
    const std::array<int, 3> strides{2, 3, 2};
    for (std::size_t g = 0; g < o.grids; ++g) {
        const auto h = build_hierarchy(random_grid(g, rng, o.seed), 4, strides);
        for (std::size_t l = 1; l < h.levels.size(); ++l) {
            const auto& fine = h.levels[l - 1];
            for (const auto& cell : h.levels[l].cells()) {
                const bool found = std::any_of(cell.children.begin(), cell.children.end(), [&](const VoxelCoord& c) {
                    const auto i = fine.find(c);
                    return i && fine[*i].rep_point == cell.rep_point && fine[*i].source_point == cell.source_point;
                });
                if (!found) {
                    return {"hierarchy-representatives", false,
                            fmt::format("grid {} level {}: representative not inherited from a child", g, l + 1)};
                }
            }
        }
    }
    return {"hierarchy-representatives", true, fmt::format("grids={}", o.grids)};
}

CheckResult knn_oracle(const SelfcheckOptions& o) {
    Rng rng(derive_seed(o.seed, "selfcheck.knn"));
    constexpr int kStride = 2;
    constexpr std::size_t kK = 16;
    for (std::size_t g = 0; g < o.grids; ++g) {
        const auto h = build_hierarchy(random_grid(g, rng, o.seed), 2, std::array<int, 1>{kStride});
        const auto& fine = h.levels[0];
        const auto& coarse = h.levels[1];
        const auto got = knn_neighbors(fine, coarse, kStride, kK);
        for (std::size_t c = 0; c < coarse.size(); ++c) {
            // Centers in doubled fine-voxel units are exact integers.
            std::vector<std::tuple<std::int64_t, VoxelCoord, std::size_t>> all;
            for (std::size_t i = 0; i < fine.size(); ++i) {
                std::int64_t d2 = 0;
                for (int a = 0; a < 3; ++a) {
                    const std::int64_t d = (2 * fine[i].coord[a] + 1) - kStride * (2 * coarse[c].coord[a] + 1);
                    d2 += d * d;
                }
                all.emplace_back(d2, fine[i].coord, i);
            }
            std::sort(all.begin(), all.end());
            std::vector<std::size_t> expected;
            for (std::size_t j = 0; j < std::min(kK, all.size()); ++j) expected.push_back(std::get<2>(all[j]));
            if (got.at(c) != expected) {
                return {"knn-oracle", false, fmt::format("grid {}: coarse voxel {} neighbors differ", g, c)};
            }
        }
    }
    return {"knn-oracle", true, fmt::format("grids={} k={}", o.grids, kK)};
}

}  // namespace

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& options) {
    return {engine_equivalence(options), attention_gradient(options), block_gradient(options), model_gradient(options),
            partition_coverage(options), hierarchy_representatives(options), knn_oracle(options)};
}

}  // namespace swin3d::cli
