// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "swin3d/bench.hpp"
#include "swin3d/errors.hpp"

namespace swin3d {
namespace {

SweepSpec small_spec(SweepVariable variable, std::vector<double> values) {
    SweepSpec spec;
    spec.variable = variable;
    spec.values = std::move(values);
    spec.base.channels = 16;
    spec.base.heads = 2;
    spec.base.depth = 2;
    spec.base.window_size = 5;
    spec.base.voxel_size = 0.04;
    spec.base.points = 1500;
    spec.base.sampler.extent = 2.0;
    spec.base.sampler.patches = 4;
    spec.base.sampler.patch_min = 0.8;
    spec.base.sampler.patch_max = 1.2;
    return spec;
}

std::vector<BenchRecord> for_engine(const std::vector<BenchRecord>& records, AttentionEngine e) {
    std::vector<BenchRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out), [&](const auto& r) { return r.engine == e; });
    return out;
}

TEST(SceneSampler, SinglePoint) {
    SceneSampler s;
    const auto pc = sample_scene(s, 1);
    EXPECT_EQ(pc.size(), 1u);
    EXPECT_EQ(pc.channels(), 6u);
}

TEST(SceneSampler, DeterministicPerSeed) {
    SceneSampler s;
    s.channels = 9;
    const auto a = sample_scene(s, 500), b = sample_scene(s, 500);
    EXPECT_EQ(a, b);
    s.seed += 1;
    const auto c = sample_scene(s, 500);
    EXPECT_NE(a.signal(0)[0], c.signal(0)[0]);
}

TEST(SceneSampler, SignalsInRange) {
    SceneSampler s;
    s.channels = 9;
    const auto pc = sample_scene(s, 2000);
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const auto r = pc.signal(i);
        for (int k = 3; k < 6; ++k) {
            EXPECT_GE(r[k], -1.0);
            EXPECT_LE(r[k], 1.0);
        }
        EXPECT_NEAR(r[6] * r[6] + r[7] * r[7] + r[8] * r[8], 1.0, 1e-12);
    }
}

TEST(SceneSampler, ZeroPointsRejected) { EXPECT_THROW(sample_scene(SceneSampler{}, 0), InputError); }

TEST(SceneSampler, SurfaceOccupancyScalesQuadratically) {
    SweepSpec spec;
    spec.values = {1};
    const auto fit = fit_occupancy(bench_level(spec), {5, 7, 9, 11, 13, 15});
    EXPECT_GE(fit.slope, 1.6);
    EXPECT_LE(fit.slope, 2.4);
    EXPECT_TRUE(std::is_sorted(fit.occupancy.begin(), fit.occupancy.end()));
}

TEST(SceneSampler, UniformVolumeOccupancyIsSteeper) {
    SweepSpec spec;
    spec.values = {1};
    spec.base.sampler.mode = SamplerMode::Uniform;
    spec.base.sampler.extent = 0.5;
    spec.base.points = 20000;
    const auto fit = fit_occupancy(bench_level(spec), {3, 5, 7, 9});
    EXPECT_GT(fit.slope, 2.4);
}

TEST(SweepSpec, ValidationNamesField) {
    auto expect_field = [](const SweepSpec& s, const std::string& field) {
        try {
            s.validate();
            FAIL() << "expected InputError for " << field;
        } catch (const InputError& e) {
            EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
        }
    };
    auto s = small_spec(SweepVariable::WindowSize, {});
    expect_field(s, "'values'");
    s.values = {5, 5};
    expect_field(s, "'values'");
    s.values = {7, 5};
    expect_field(s, "'values'");
    s.values = {5.5};
    expect_field(s, "values[0]");
    s.values = {5};
    s.repetitions = 0;
    expect_field(s, "repetitions");
    s.repetitions = 1;
    s.engines.clear();
    expect_field(s, "engines");
    s = small_spec(SweepVariable::Heads, {1, 3});
    expect_field(s, "values[1]");
}

TEST(SweepSpec, ParsesYaml) {
    const auto spec = parse_sweep_spec(R"(
variable: heads
values: [1, 2, 4]
repetitions: 2
engines: [streaming]
seed: 7
base:
  channels: 16
  heads: 1
  points: 100
  sampler:
    mode: uniform
    extent: 1.5
)");
    EXPECT_EQ(spec.variable, SweepVariable::Heads);
    EXPECT_EQ(spec.values, (std::vector<double>{1, 2, 4}));
    EXPECT_EQ(spec.repetitions, 2);
    ASSERT_EQ(spec.engines.size(), 1u);
    EXPECT_EQ(spec.engines[0], AttentionEngine::Streaming);
    EXPECT_EQ(spec.seed, 7u);
    EXPECT_EQ(spec.base.channels, 16u);
    EXPECT_EQ(spec.base.points, 100u);
    EXPECT_EQ(spec.base.sampler.mode, SamplerMode::Uniform);
    EXPECT_DOUBLE_EQ(spec.base.sampler.extent, 1.5);
}

TEST(SweepSpec, YamlErrorsNameField) {
    auto message = [](const std::string& yaml) {
        try {
            parse_sweep_spec(yaml);
        } catch (const InputError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(message("variable: colour\nvalues: [1]\n").find("variable"), std::string::npos);
    EXPECT_NE(message("variable: depth\n").find("values"), std::string::npos);
    EXPECT_NE(message("variable: depth\nvalues: [1]\nbogus: 3\n").find("bogus"), std::string::npos);
    EXPECT_NE(message("variable: depth\nvalues: [1]\nengines: [fast]\n").find("engines[0]"), std::string::npos);
    EXPECT_NE(message("variable: depth\nvalues: [1]\nbase: {channels: x}\n").find("base.channels"), std::string::npos);
}

TEST(BenchPoint, MapsSweepValues) {
    auto s = small_spec(SweepVariable::WidthRatio, {0.5, 1.5});
    EXPECT_EQ(bench_point(s, 0.5).channels, 8u);
    EXPECT_EQ(bench_point(s, 1.5).channels, 24u);
    s.variable = SweepVariable::Heads;
    EXPECT_EQ(bench_point(s, 4).heads, 8u);
    s.variable = SweepVariable::Depth;
    EXPECT_EQ(bench_point(s, 3).depth, 3);
    s.variable = SweepVariable::WindowSize;
    EXPECT_EQ(bench_point(s, 9).window_size, 9);
}

TEST(RunSweep, SingleValueGivesRepsTimesEngines) {
    auto spec = small_spec(SweepVariable::Depth, {1});
    spec.repetitions = 3;
    const auto result = run_sweep(spec);
    EXPECT_EQ(result.records.size(), 6u);
    for (const auto& r : result.records) {
        EXPECT_EQ(r.status, "ok");
        EXPECT_GE(r.peak_bytes, 0);
        EXPECT_GE(r.alloc_count, 0);
        EXPECT_LE(r.coeff_bytes, r.peak_bytes);
        EXPECT_GT(r.voxels, 0u);
        EXPECT_GT(r.windows, 0u);
    }
    EXPECT_LE(result.max_engine_difference, 1e-10);
}

TEST(RunSweep, MemoryCountersAreReproducible) {
    auto spec = small_spec(SweepVariable::Depth, {1, 2});
    spec.repetitions = 2;
    const auto a = run_sweep(spec).records, b = run_sweep(spec).records;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].peak_bytes, b[i].peak_bytes);
        EXPECT_EQ(a[i].alloc_count, b[i].alloc_count);
        EXPECT_EQ(a[i].coeff_bytes, b[i].coeff_bytes);
    }
}

TEST(RunSweep, WindowSweepCoefficientAccounting) {
    auto spec = small_spec(SweepVariable::WindowSize, {3, 5, 7});
    const auto records = run_sweep(spec).records;
    const auto level = bench_level(spec);
    for (const auto& r : records) {
        if (r.engine == AttentionEngine::Streaming) {
            EXPECT_EQ(r.coeff_bytes, 0);
            continue;
        }
        // Blocks run one at a time, and each keeps its coefficients for the
        // backward pass, so the live peak is the whole stack's total.
        const int m = static_cast<int>(r.value);
        std::int64_t expected = 0;
        for (int b = 0; b < spec.base.depth; ++b) {
            for (const auto& w : partition_windows(level, m, b % 2 == 1).windows) {
                const auto n = static_cast<std::int64_t>(w.members.size());
                expected += n * n * static_cast<std::int64_t>(spec.base.heads) * 8;
            }
        }
        EXPECT_EQ(r.coeff_bytes, expected) << "M=" << m;
    }
}

TEST(RunSweep, CoefficientsPerWindowSuperlinearInOccupancy) {
    auto spec = small_spec(SweepVariable::WindowSize, {3, 5, 7, 9});
    spec.base.depth = 1;
    spec.engines = {AttentionEngine::Vanilla};
    const auto records = run_sweep(spec).records;
    const auto level = bench_level(spec);
    std::vector<double> x, y;
    for (const auto& r : records) {
        x.push_back(std::log(mean_window_occupancy(level, static_cast<int>(r.value))));
        y.push_back(std::log(static_cast<double>(r.coeff_bytes) / static_cast<double>(r.windows)));
    }
    const double slope = (y.back() - y.front()) / (x.back() - x.front());
    EXPECT_GT(slope, 1.5);
}

TEST(RunSweep, HeadSweepTrend) {
    const auto records = run_sweep(small_spec(SweepVariable::Heads, {1, 2, 4, 8})).records;
    const auto vanilla = for_engine(records, AttentionEngine::Vanilla);
    const auto streaming = for_engine(records, AttentionEngine::Streaming);
    ASSERT_EQ(vanilla.size(), 4u);
    for (std::size_t i = 1; i < vanilla.size(); ++i) EXPECT_GT(vanilla[i].peak_bytes, vanilla[i - 1].peak_bytes);
    const auto [lo, hi] = std::minmax_element(streaming.begin(), streaming.end(),
                                              [](const auto& a, const auto& b) { return a.peak_bytes < b.peak_bytes; });
    EXPECT_LT(static_cast<double>(hi->peak_bytes - lo->peak_bytes) / static_cast<double>(lo->peak_bytes), 0.10);
}

TEST(RunSweep, ParallelModeSkipsTiming) {
    auto spec = small_spec(SweepVariable::Depth, {1});
    spec.threads = 2;
    const auto parallel = run_sweep(spec).records;
    spec.threads = 1;
    const auto serial = run_sweep(spec).records;
    ASSERT_EQ(parallel.size(), serial.size());
    for (std::size_t i = 0; i < parallel.size(); ++i) {
        EXPECT_EQ(parallel[i].time_ms, 0.0);
        EXPECT_EQ(parallel[i].coeff_bytes, serial[i].coeff_bytes);
    }
}

BenchRecord sample_record(AttentionEngine engine, double value, std::int64_t peak) {
    BenchRecord r;
    r.variable = "window-size";
    r.value = value;
    r.engine = engine;
    r.peak_bytes = peak;
    r.alloc_count = 17;
    r.time_ms = 1.25;
    r.voxels = 40;
    r.windows = 3;
    r.coeff_bytes = engine == AttentionEngine::Vanilla ? 4096 : 0;
    return r;
}

TEST(Report, OneRecordTwoLines) {
    const auto report = emit_report({sample_record(AttentionEngine::Streaming, 5, 1000)});
    EXPECT_EQ(std::count(report.csv.begin(), report.csv.end(), '\n'), 2);
    EXPECT_EQ(report.csv.substr(0, kBenchCsvHeader.size()), kBenchCsvHeader);
    EXPECT_FALSE(report.summary.empty());
}

TEST(Report, EmptyIsUsageError) { EXPECT_THROW(emit_report({}), UsageError); }

TEST(Report, CsvRoundTrip) {
    std::vector<BenchRecord> records{sample_record(AttentionEngine::Vanilla, 5, 123456),
                                     sample_record(AttentionEngine::Streaming, 5, 1000)};
    records[1].time_ms = 0.1 + 0.2;
    records[1].value = 1.0 / 3.0;
    records[1].status = "non-finite";
    EXPECT_EQ(parse_records_csv(records_to_csv(records)), records);
}

TEST(Report, MalformedCsvNamesLine) {
    std::string csv = records_to_csv({sample_record(AttentionEngine::Vanilla, 5, 1)});
    csv += "window-size,5,vanilla,0,oops,1,1,1,1,0,ok\n";
    try {
        parse_records_csv(csv);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    EXPECT_THROW(parse_records_csv("nope\n"), ParseError);
}

TEST(Report, RatioAtLeastOneFromMeasuredSweep) {
    const auto records = run_sweep(small_spec(SweepVariable::WindowSize, {3, 5})).records;
    for (const auto& row : summarize(records)) EXPECT_GE(row.ratio, 1.0);
}

TEST(Report, SummaryMeansOverReps) {
    auto a = sample_record(AttentionEngine::Vanilla, 5, 300);
    auto b = sample_record(AttentionEngine::Vanilla, 5, 500);
    b.rep = 1;
    const auto rows = summarize({a, b, sample_record(AttentionEngine::Streaming, 5, 200)});
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_DOUBLE_EQ(rows[0].vanilla_peak, 400.0);
    EXPECT_DOUBLE_EQ(rows[0].ratio, 2.0);
}

TEST(Report, PlotData) {
    const auto dir = std::filesystem::temp_directory_path() / "swin3d_plot_test";
    std::filesystem::create_directories(dir);
    const auto paths = write_plot_data((dir / "sweep").string(), {sample_record(AttentionEngine::Vanilla, 5, 300),
                                                                  sample_record(AttentionEngine::Vanilla, 7, 500)});
    ASSERT_EQ(paths.size(), 1u);
    std::ifstream in(paths[0]);
    double v, p;
    in >> v >> p;
    EXPECT_EQ(v, 5.0);
    EXPECT_EQ(p, 300.0);
    in >> v >> p;
    EXPECT_EQ(v, 7.0);
    std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace swin3d
