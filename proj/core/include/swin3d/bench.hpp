// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Memory and timing sweeps of the two attention engines over synthetic
// surface-like scenes. Memory figures come from the tracking allocator and
// are exact; wall-clock figures are informative only.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "swin3d/attention.hpp"
#include "swin3d/point_cloud.hpp"
#include "swin3d/random.hpp"
#include "swin3d/voxel_grid.hpp"

namespace swin3d {

enum class SamplerMode { Surface, Uniform };

std::string_view to_string(SamplerMode mode);
SamplerMode parse_sampler_mode(std::string_view name);

struct SceneSampler {
    SamplerMode mode = SamplerMode::Surface;
    double extent = 4.0;  // meters per axis
    std::size_t patches = 6;
    double patch_min = 1.5;  // patch side length range, meters
    double patch_max = 2.5;
    double jitter = 0.005;  // offset along the patch normal, meters
    std::size_t channels = 6;
    std::uint64_t seed = kDefaultSeed;
};

// Points on randomly oriented rectangular patches (or uniform in the cube
// in Uniform mode), colors uniform in [-1, 1], normals from the patch.
PointCloud sample_scene(const SceneSampler& sampler, std::size_t n_points);

// Voxel count over the number of non-empty regular windows of size M.
double mean_window_occupancy(const SparseVoxelLevel& level, int window_size);

struct OccupancyFit {
    std::vector<int> window_sizes;
    std::vector<double> occupancy;
    double slope = 0.0;  // least-squares slope of log occupancy over log M
};

OccupancyFit fit_occupancy(const SparseVoxelLevel& level, const std::vector<int>& window_sizes);

enum class SweepVariable { WidthRatio, Depth, Heads, WindowSize };

std::string_view to_string(SweepVariable v);
SweepVariable parse_sweep_variable(std::string_view name);

// The attention stack being measured: `depth` transformer blocks at one
// voxel level, alternating regular and shifted windows.
struct BenchBase {
    std::size_t channels = 32;
    std::size_t heads = 2;
    int depth = 2;
    int window_size = 5;
    double voxel_size = 0.02;
    std::size_t points = 8000;
    SceneSampler sampler;
};

struct SweepSpec {
    SweepVariable variable = SweepVariable::WindowSize;
    // width-ratio: channel multiplier (rounded to a multiple of the head
    // count); heads: head-count multiplier; depth and window-size: absolute.
    std::vector<double> values;
    BenchBase base;
    int repetitions = 1;
    std::vector<AttentionEngine> engines{AttentionEngine::Vanilla, AttentionEngine::Streaming};
    // More than one thread enables window parallelism and disables timing.
    std::size_t threads = 1;
    std::uint64_t seed = kDefaultSeed;

    // Throws InputError naming the offending field.
    void validate() const;
};

SweepSpec parse_sweep_spec(const std::string& yaml);
SweepSpec load_sweep_spec(const std::string& path);

// Concrete stack for one sweep value.
struct BenchPoint {
    std::size_t channels = 0;
    std::size_t heads = 0;
    int depth = 0;
    int window_size = 0;
};
BenchPoint bench_point(const SweepSpec& spec, double value);

struct BenchRecord {
    std::string variable;
    double value = 0.0;
    AttentionEngine engine = AttentionEngine::Streaming;
    int rep = 0;
    std::int64_t peak_bytes = 0;   // all tracked allocations, forward + backward
    std::int64_t alloc_count = 0;
    double time_ms = 0.0;
    std::size_t voxels = 0;
    std::size_t windows = 0;       // non-empty regular windows
    std::int64_t coeff_bytes = 0;  // peak live coefficient-array bytes
    std::string status = "ok";     // ok | non-finite | mismatch

    friend bool operator==(const BenchRecord&, const BenchRecord&) = default;
};

struct SweepResult {
    std::vector<BenchRecord> records;
    // Largest relative difference between engine outputs over all values.
    double max_engine_difference = 0.0;
};

SweepResult run_sweep(const SweepSpec& spec);

// Level the sweep runs on (the sampled scene voxelized at base.voxel_size).
SparseVoxelLevel bench_level(const SweepSpec& spec);

inline constexpr std::string_view kBenchCsvHeader =
    "variable,value,engine,rep,peak_bytes,alloc_count,time_ms,voxels,windows,coeff_bytes,status";

std::string records_to_csv(const std::vector<BenchRecord>& records);
// Throws ParseError with the line number on malformed input.
std::vector<BenchRecord> parse_records_csv(const std::string& text);

struct SummaryRow {
    double value = 0.0;
    double vanilla_peak = 0.0;  // mean over repetitions, 0 if absent
    double streaming_peak = 0.0;
    double vanilla_time_ms = 0.0;
    double streaming_time_ms = 0.0;
    double vanilla_coeff = 0.0;
    double streaming_coeff = 0.0;
    // vanilla_peak / streaming_peak when both engines ran, else 0.
    double ratio = 0.0;
};

std::vector<SummaryRow> summarize(const std::vector<BenchRecord>& records);

struct Report {
    std::string csv;
    std::string summary;
};

// Throws UsageError on an empty record list.
Report emit_report(const std::vector<BenchRecord>& records);

// One "value mean_peak_bytes" file per engine: <prefix>_<engine>.dat.
std::vector<std::string> write_plot_data(const std::string& prefix, const std::vector<BenchRecord>& records);

}  // namespace swin3d
