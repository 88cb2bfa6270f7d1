// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "support/attention_fixtures.hpp"
#include "support/attention_oracle.hpp"
#include "support/fixtures.hpp"
#include "support/model_counts.hpp"
#include "swin3d/backbone.hpp"
#include "swin3d/bench.hpp"
#include "swin3d/gradcheck.hpp"

namespace {

using namespace swin3d;
using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// --- 1 ---------------------------------------------------------------------

Outcome engine_equivalence() {
    constexpr double kTol = 1e-10;
    constexpr std::array<std::size_t, 4> kHeads{1, 2, 4, 8};
    const auto t0 = Clock::now();
    Rng rng(derive_seed(kDefaultSeed, "acceptance.equivalence"));
    std::uniform_int_distribution<std::size_t> width(1, 4);
    double worst_engine = 0.0, worst_oracle = 0.0;
    std::size_t windows = 0;
    for (std::size_t combo = 0; combo < 8; ++combo) {
        const std::size_t heads = kHeads[combo % 4], m = combo < 4 ? 6 : 9;
        for (std::size_t t = 0; t < 16; ++t) {
            const std::size_t n = 1 + (4 * t + combo) % 64;
            auto inst = testing::random_attention_instance(n, heads * width(rng), heads, m, rng);
            const Tensor vanilla = attention_vanilla(inst.batch, inst.params);
            const Tensor streaming = attention_streaming(inst.batch, inst.params);
            const Tensor oracle = testing::naive_attention(inst.batch, inst.params);
            worst_engine = std::max(worst_engine, relative_error_inf(streaming, vanilla));
            worst_oracle = std::max(worst_oracle, relative_error_inf(vanilla, oracle));
            ++windows;
        }
    }
    const double secs = seconds_since(t0);
    return {worst_engine <= kTol && worst_oracle <= kTol && secs < 60.0,
            fmt::format("{} windows (N 1..64, heads 1/2/4/8, m 6/9): streaming vs vanilla {:.2e}, vanilla vs naive "
                        "oracle {:.2e} (tol {:.0e}); {:.2f} s (limit 60 s)",
                        windows, worst_engine, worst_oracle, kTol, secs)};
}

// --- 2 ---------------------------------------------------------------------

struct GradResult {
    std::string name;
    GradCheckReport report;
    double tol;
};

GradResult check_attention(AttentionEngine engine) {
    Rng rng(derive_seed(kDefaultSeed, "acceptance.grad.attention"));
    const auto level = testing::random_level(30, 3, rng, 9);
    const auto signals = level_signals(level);
    const auto partition = partition_windows(level, 3, false);
    AttentionParams params("attn", 6, 2, signal_layout(9), partition.window_height);
    fill_uniform(params.q.value, rng, -0.5, 0.5);
    fill_uniform(params.k.value, rng, -0.5, 0.5);
    fill_uniform(params.v.value, rng, -0.5, 0.5);
    params.tables.visit([&](Parameter& p) { fill_uniform(p.value, rng, -0.3, 0.3); });
    Parameter x("x", Tensor::matrix(level.size(), 6));
    fill_uniform(x.value, rng, -1.0, 1.0);
    Tensor r = Tensor::matrix(level.size(), 6);
    fill_uniform(r, rng, -1.0, 1.0);
    std::vector<Parameter*> ps{&x};
    params.visit([&](Parameter& p) { ps.push_back(&p); });
    const auto report = gradcheck(ps, [&](Tape& t) {
        return weighted_sum(t, windowed_attention(t, t.param(x), signals, partition, params, {engine, 1}), r);
    });
    return {fmt::format("attention/{} (Q, K, V, query/key/value tables)", to_string(engine)), report, 1e-4};
}

GradResult check_layer_norm() {
    Rng rng(derive_seed(kDefaultSeed, "acceptance.grad.layernorm"));
    Parameter x("x", Tensor::matrix(12, 7)), gamma("gamma", Tensor::matrix(1, 7)), beta("beta", Tensor::matrix(1, 7));
    fill_uniform(x.value, rng, -2.0, 2.0);
    fill_uniform(gamma.value, rng, 0.5, 1.5);
    fill_uniform(beta.value, rng, -0.5, 0.5);
    Tensor r = Tensor::matrix(12, 7);
    fill_uniform(r, rng, -1.0, 1.0);
    std::vector<Parameter*> ps{&x, &gamma, &beta};
    const auto report = gradcheck(ps, [&](Tape& t) {
        return weighted_sum(t, layer_norm(t, t.param(x), t.param(gamma), t.param(beta)), r);
    });
    return {"layer norm", report, 1e-4};
}

GradResult check_mlp() {
    Rng rng(derive_seed(kDefaultSeed, "acceptance.grad.mlp"));
    Parameter x("x", Tensor::matrix(10, 6)), w1("w1", Tensor::matrix(6, 24)), b1("b1", Tensor::matrix(1, 24));
    Parameter w2("w2", Tensor::matrix(24, 6)), b2("b2", Tensor::matrix(1, 6));
    for (auto* p : {&x, &w1, &b1, &w2, &b2}) fill_uniform(p->value, rng, -0.8, 0.8);
    Tensor r = Tensor::matrix(10, 6);
    fill_uniform(r, rng, -1.0, 1.0);
    std::vector<Parameter*> ps{&x, &w1, &b1, &w2, &b2};
    const auto report = gradcheck(ps, [&](Tape& t) {
        return weighted_sum(t, mlp_block(t, t.param(x), t.param(w1), t.param(b1), t.param(w2), t.param(b2)), r);
    });
    return {"MLP", report, 1e-4};
}

BackboneConfig small_toy() {
    auto config = backbone_preset("toy");
    config.finest_voxel_size = 0.1;
    return config;
}

GradResult check_initial_embed() {
    const auto config = small_toy();
    Backbone model(config, derive_seed(kDefaultSeed, "init"));
    Rng rng(derive_seed(kDefaultSeed, "acceptance.grad.embed"));
    fill_uniform(model.embed.bn_gamma.value, rng, 0.5, 1.5);
    fill_uniform(model.embed.bn_beta.value, rng, -0.5, 0.5);
    const auto data = make_separable_dataset(1, 60, kDefaultSeed);
    const auto scene = prepare_labeled_scene(data[0], config, kDefaultSeed);
    Tensor r = Tensor::matrix(scene.hierarchy.levels[0].size(), config.channels[0]);
    fill_uniform(r, rng, -1.0, 1.0);
    std::vector<Parameter*> ps;
    model.embed.visit([&](Parameter& p) { ps.push_back(&p); });
    const auto report = gradcheck(ps, [&](Tape& t) { return weighted_sum(t, initial_embed(t, scene, model), r); });
    return {"initial embed (conv + batch norm + ReLU)", report, 1e-4};
}

GradResult check_end_to_end() {
    const auto config = small_toy();
    Backbone model(config, derive_seed(kDefaultSeed, "init"));
    Rng rng(derive_seed(kDefaultSeed, "acceptance.grad.model"));
    model.visit([&](Parameter& p) {
        if (p.name.find(".table_") != std::string::npos) fill_uniform(p.value, rng, -0.2, 0.2);
    });
    const auto data = make_separable_dataset(1, 60, kDefaultSeed);
    const auto scene = prepare_labeled_scene(data[0], config, kDefaultSeed);
    std::vector<Parameter*> ps;
    model.visit([&](Parameter& p) { ps.push_back(&p); });
    GradCheckOptions opts;
    opts.fraction = 0.01;
    opts.seed = kDefaultSeed;
    const auto report = gradcheck(ps, [&](Tape& t) {
        return softmax_cross_entropy(t, decode_segmentation(t, scene, encode(t, scene, model, {}), model),
                                     scene.labels);
    }, opts);
    return {"toy encoder + decoder (1% sample)", report, 1e-3};
}

Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    std::vector<GradResult> results{check_attention(AttentionEngine::Vanilla), check_attention(AttentionEngine::Streaming),
                                    check_layer_norm(), check_mlp(), check_initial_embed(), check_end_to_end()};
    const double secs = seconds_since(t0);
    bool pass = secs < 300.0;
    std::string detail;
    for (const auto& r : results) {
        const bool ok = r.report.max_rel_error < r.tol && r.report.checked > 0;
        pass = pass && ok;
        detail += fmt::format("\n    {}: {} entries, max rel err {:.2e} (tol {:.0e}) at {}", r.name,
                              r.report.checked, r.report.max_rel_error, r.tol, r.report.worst);
    }
    return {pass, fmt::format("central differences, step 1e-5; {:.1f} s (limit 300 s){}", secs, detail)};
}

// --- 3 and 4 ---------------------------------------------------------------

std::vector<BenchRecord> engine_records(const std::vector<BenchRecord>& all, AttentionEngine e) {
    std::vector<BenchRecord> out;
    std::copy_if(all.begin(), all.end(), std::back_inserter(out), [&](const auto& r) { return r.engine == e; });
    return out;
}

double spread(const std::vector<BenchRecord>& records) {
    const auto [lo, hi] = std::minmax_element(records.begin(), records.end(),
                                              [](const auto& a, const auto& b) { return a.peak_bytes < b.peak_bytes; });
    return static_cast<double>(hi->peak_bytes - lo->peak_bytes) / static_cast<double>(lo->peak_bytes);
}

Outcome memory_contract() {
    SweepSpec spec;
    spec.variable = SweepVariable::WindowSize;
    spec.values = {5, 7, 9, 11, 13, 15};
    const auto result = run_sweep(spec);
    const auto level = bench_level(spec);
    const auto vanilla = engine_records(result.records, AttentionEngine::Vanilla);
    const auto streaming = engine_records(result.records, AttentionEngine::Streaming);

    bool exact = vanilla.size() == spec.values.size() && streaming.size() == spec.values.size();
    std::string counts;
    for (const auto& r : vanilla) {
        // Every block of the stack keeps its coefficients until backward.
        std::int64_t scalars = 0;
        for (int b = 0; b < spec.base.depth; ++b) {
            for (const auto& w : partition_windows(level, static_cast<int>(r.value), block_is_shifted(b)).windows) {
                const auto n = static_cast<std::int64_t>(w.members.size());
                scalars += n * n * static_cast<std::int64_t>(spec.base.heads);
            }
        }
        exact = exact && r.coeff_bytes == scalars * static_cast<std::int64_t>(sizeof(double));
        counts += fmt::format(" {}", scalars);
    }
    for (const auto& r : streaming) exact = exact && r.coeff_bytes == 0;

    const auto rows = summarize(result.records);
    bool increasing = true;
    std::string ratios;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ratios += fmt::format(" {:.4f}", rows[i].ratio);
        if (i > 0 && !(rows[i].ratio > rows[i - 1].ratio)) increasing = false;
    }
    const double flat = spread(streaming);
    const bool statuses = std::all_of(result.records.begin(), result.records.end(), [](const auto& r) { return r.status == "ok"; });
    return {exact && increasing && flat < 0.10 && statuses,
            fmt::format("M 5..15 on {} voxels: streaming coefficient bytes all 0 and vanilla equals sum N_w^2 H "
                        "scalars exactly: {} (scalars:{}); peak ratio{} strictly increasing: {}; streaming peak "
                        "spread {:.2f}% (limit 10%); engine diff {:.1e}",
                        vanilla.empty() ? 0 : vanilla.front().voxels, exact ? "yes" : "NO", counts, ratios,
                        increasing ? "yes" : "NO", 100.0 * flat, result.max_engine_difference)};
}

Outcome head_sweep() {
    SweepSpec spec;
    spec.variable = SweepVariable::Heads;
    spec.base.heads = 1;
    spec.values = {1, 2, 4, 8};
    const auto result = run_sweep(spec);
    const auto vanilla = engine_records(result.records, AttentionEngine::Vanilla);
    const auto streaming = engine_records(result.records, AttentionEngine::Streaming);
    bool increasing = vanilla.size() == 4;
    std::string peaks;
    for (std::size_t i = 0; i < vanilla.size(); ++i) {
        peaks += fmt::format(" {}", vanilla[i].peak_bytes);
        if (i > 0 && !(vanilla[i].peak_bytes > vanilla[i - 1].peak_bytes)) increasing = false;
    }
    std::string speaks;
    for (const auto& r : streaming) speaks += fmt::format(" {}", r.peak_bytes);
    const double flat = spread(streaming);
    return {increasing && flat < 0.10,
            fmt::format("heads 1/2/4/8: vanilla peak bytes{} strictly increasing: {}; streaming peak bytes{} spread "
                        "{:.2f}% (limit 10%)",
                        peaks, increasing ? "yes" : "NO", speaks, 100.0 * flat)};
}

// --- 5 ---------------------------------------------------------------------

Outcome crse_constants() {
    bool ok = kPositionTableLength == 4 && kSignalTableLength == 16;
    const double h = 0.35;
    const auto pos = make_quantizer(SignalKind::Position, h, kPositionTableLength);
    const auto col = make_quantizer(SignalKind::Color, h, kSignalTableLength);
    const auto nor = make_quantizer(SignalKind::Normal, h, kSignalTableLength);
    ok = ok && pos.quat == 2 * h && pos.minquat == -h && pos.length == 4;
    ok = ok && col.quat == 2.0 && col.minquat == -1.0 && col.length == 16;
    ok = ok && nor.quat == 2.0 && nor.minquat == -1.0 && nor.length == 16;

    // Toy first stage: 8 channels, 2 heads of width 4.
    // m = 6: 3 * (4 + 4 + 4 + 16 + 16 + 16) * 2 * 4 = 1440
    // m = 9: 3 * (4 + 4 + 4 + 16 * 6) * 2 * 4 = 2592
    const auto toy = backbone_preset("toy");
    std::string counts;
    for (auto [m, hand] : {std::pair<std::size_t, std::size_t>{6, 1440}, {9, 2592}}) {
        CrseTables tables("t", signal_layout(m), toy.heads[0], toy.channels[0] / toy.heads[0], toy.window_height(0));
        std::size_t summed = 0;
        tables.visit([&](Parameter& p) { summed += p.value.size(); });
        ok = ok && tables.parameter_count() == hand && summed == hand;
        counts += fmt::format(" m={}: {} (hand {})", m, tables.parameter_count(), hand);
    }
    Backbone model(toy, kDefaultSeed);
    std::size_t layer = 0;
    model.blocks[0][0].attention.tables.visit([&](Parameter& p) { layer += p.value.size(); });
    ok = ok && layer == 1440;
    return {ok, fmt::format("L 4/16; position quantizer (2h, -h) = ({}, {}) at h={}; color/normal (2, -1) = ({}, {}); "
                            "table parameters{}; toy block 1 layer {}",
                            pos.quat, pos.minquat, h, col.quat, col.minquat, counts, layer)};
}

// --- 6 ---------------------------------------------------------------------

Outcome partition_coverage() {
    Rng rng(derive_seed(kDefaultSeed, "acceptance.partition"));
    std::uniform_int_distribution<std::size_t> count(1, 200);
    std::uniform_int_distribution<std::int64_t> extent(2, 10);
    std::uniform_int_distribution<int> window(1, 9);
    constexpr std::size_t kGrids = 1000;
    for (std::size_t g = 0; g < kGrids; ++g) {
        const std::int64_t e = extent(rng);
        const std::size_t n = std::min<std::size_t>(count(rng), static_cast<std::size_t>(8 * e * e * e));
        const auto level = testing::random_level(n, e, rng);
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
                            return {false, fmt::format("grid {} M={} {}: voxel {} sits in window offset by other "
                                                       "than floor(M/2)",
                                                       g, m, shifted ? "shifted" : "regular", i)};
                        }
                    }
                }
            }
            if (std::any_of(hits.begin(), hits.end(), [](int c) { return c != 1; })) {
                return {false, fmt::format("grid {} M={}: a voxel is covered other than exactly once", g, m)};
            }
        }
    }
    return {true, fmt::format("{} random grids, M 1..9: regular and shifted partitions cover every voxel exactly once; "
                              "shifted windows offset by (floor(M/2),)*3",
                              kGrids)};
}

// --- 7 ---------------------------------------------------------------------

bool rep_from_descendant(const VoxelHierarchy& h, std::size_t level, const VoxelRecord& cell,
                         const std::array<double, 3>& rep) {
    if (level == 0) return cell.rep_point == rep;
    const auto& fine = h.levels[level - 1];
    for (const auto& c : cell.children) {
        const auto i = fine.find(c);
        if (i && rep_from_descendant(h, level - 1, fine[*i], rep)) return true;
    }
    return false;
}

Outcome hierarchy_and_presets() {
    Rng rng(derive_seed(kDefaultSeed, "acceptance.hierarchy"));
    std::uniform_int_distribution<std::size_t> count(1, 300);
    const std::array<int, 4> strides{3, 2, 2, 2};
    std::size_t coarse = 0;
    for (std::size_t g = 0; g < 100; ++g) {
        const auto h = build_hierarchy(testing::random_level(count(rng), 12, rng), 5, strides);
        for (std::size_t l = 1; l < h.levels.size(); ++l) {
            for (const auto& cell : h.levels[l].cells()) {
                ++coarse;
                if (!rep_from_descendant(h, l, cell, cell.rep_point)) {
                    return {false, fmt::format("grid {} level {}: representative is not a descendant's", g, l + 1)};
                }
            }
        }
    }

    struct Expected {
        const char* name;
        std::vector<std::size_t> channels, heads;
    };
    const std::vector<int> depths{2, 4, 9, 4, 4}, windows{5, 7, 7, 7, 7}, preset_strides{3, 2, 2, 2};
    bool presets = true;
    std::string sizes;
    for (const Expected& e : {Expected{"swin3d-s", {48, 96, 192, 384, 384}, {6, 6, 12, 24, 24}},
                              Expected{"swin3d-l", {80, 160, 320, 640, 640}, {10, 10, 20, 40, 40}}}) {
        const auto c = backbone_preset(e.name);
        c.validate();
        presets = presets && c.channels == e.channels && c.heads == e.heads && c.depths == depths &&
                  c.window_sizes == windows && c.strides == preset_strides;
        Backbone model(c, kDefaultSeed);
        presets = presets && model.parameter_count() == testing::expected_parameters(c);
        sizes += fmt::format(" {} {} parameters;", e.name, model.parameter_count());
    }
    return {presets, fmt::format("100 random grids, {} coarse voxels: every representative inherited from a "
                                 "descendant; presets match FD/HD/depths/windows/strides and construct:{}",
                                 coarse, sizes)};
}

// --- 8 ---------------------------------------------------------------------

Outcome toy_training() {
    const auto t0 = Clock::now();
    const auto config = backbone_preset("toy");
    auto run = [&] {
        Backbone model(config, kDefaultSeed);
        std::vector<PreparedScene> scenes;
        for (const auto& s : make_separable_dataset(6, 240, kDefaultSeed)) {
            scenes.push_back(prepare_labeled_scene(s, config, kDefaultSeed));
        }
        TrainOptions opts;
        opts.epochs = 50;
        return train_toy(model, scenes, opts);
    };
    const auto a = run();
    const auto b = run();
    const double secs = seconds_since(t0);
    const bool same = a.loss_curve == b.loss_curve && a.accuracy == b.accuracy;
    return {a.accuracy > 0.95 && same && secs < 600.0,
            fmt::format("50 epochs: accuracy {:.4f} (need > 0.95); loss {:.4f} -> {:.4f}; second run identical: {}; "
                        "both runs {:.1f} s (limit 600 s)",
                        a.accuracy, a.loss_curve.front(), a.loss_curve.back(), same ? "yes" : "NO", secs)};
}

// --- 9 ---------------------------------------------------------------------

Outcome occupancy_premise() {
    SweepSpec spec;
    spec.values = {1};
    const auto level = bench_level(spec);
    const auto fit = fit_occupancy(level, {5, 7, 9, 11, 13, 15});
    std::string occ;
    for (double o : fit.occupancy) occ += fmt::format(" {:.1f}", o);
    return {fit.slope >= 1.6 && fit.slope <= 2.4,
            fmt::format("surface sampler, {} voxels: mean occupancy at M 5..15:{}; log-log slope {:.3f} (need "
                        "[1.6, 2.4])",
                        level.size(), occ, fit.slope)};
}

}  // namespace

int main() {
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, engine_equivalence}, {2, gradient_correctness}, {3, memory_contract},
        {4, head_sweep},         {5, crse_constants},       {6, partition_coverage},
        {7, hierarchy_and_presets}, {8, toy_training},      {9, occupancy_premise}};
    int failed = 0;
    for (const auto& [id, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        failed += o.pass ? 0 : 1;
        std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
