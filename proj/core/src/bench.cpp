// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "swin3d/backbone.hpp"
#include "swin3d/errors.hpp"
#include "swin3d/memory.hpp"

namespace swin3d {

std::string_view to_string(SamplerMode mode) { return mode == SamplerMode::Surface ? "surface" : "uniform"; }

SamplerMode parse_sampler_mode(std::string_view name) {
    if (name == "surface") return SamplerMode::Surface;
    if (name == "uniform") return SamplerMode::Uniform;
    throw InputError(fmt::format("unknown sampler mode '{}' (expected surface or uniform)", name));
}

namespace {

using Vec3 = std::array<double, 3>;

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalized(Vec3 v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (auto& c : v) c /= n;
    return v;
}

Vec3 random_unit(Rng& rng) {
    for (;;) {
        Vec3 v{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
        const double n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if (n2 > 0.01 && n2 <= 1.0) return normalized(v);
    }
}

struct Patch {
    Vec3 center, normal, u, v;
    double a = 0.0, b = 0.0;
};

}  // namespace

PointCloud sample_scene(const SceneSampler& s, std::size_t n_points) {
    if (n_points == 0) throw InputError("sample_scene: need at least one point");
    if (!(s.extent > 0.0)) throw InputError("sample_scene: extent must be positive");
    Rng rng(derive_seed(s.seed, "sampler"));
    PointCloud pc(s.channels);
    std::vector<double> row(s.channels);
    auto fill_signals = [&](const Vec3& normal) {
        for (std::size_t k = 3; k < 6; ++k) row[k] = uniform(rng, -1.0, 1.0);
        for (std::size_t k = 6; k < s.channels; ++k) row[k] = normal[k - 6];
    };

    if (s.mode == SamplerMode::Uniform) {
        for (std::size_t i = 0; i < n_points; ++i) {
            for (int k = 0; k < 3; ++k) row[k] = uniform(rng, 0.0, s.extent);
            fill_signals(random_unit(rng));
            pc.add(row);
        }
        return pc;
    }

    if (s.patches == 0 || !(s.patch_min > 0.0) || s.patch_max < s.patch_min) {
        throw InputError("sample_scene: invalid patch parameters");
    }
    std::vector<Patch> patches(s.patches);
    std::vector<double> cumulative;
    double total = 0.0;
    for (auto& p : patches) {
        for (auto& c : p.center) c = uniform(rng, 0.0, s.extent);
        p.normal = random_unit(rng);
        const Vec3 axis = std::abs(p.normal[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
        p.u = normalized(cross(p.normal, axis));
        p.v = cross(p.normal, p.u);
        p.a = uniform(rng, s.patch_min, s.patch_max);
        p.b = uniform(rng, s.patch_min, s.patch_max);
        total += p.a * p.b;
        cumulative.push_back(total);
    }
    for (std::size_t i = 0; i < n_points; ++i) {
        const double pick = uniform(rng, 0.0, total);
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        const auto& p = patches[std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                                      patches.size() - 1)];
        const double x = uniform(rng, -0.5 * p.a, 0.5 * p.a);
        const double y = uniform(rng, -0.5 * p.b, 0.5 * p.b);
        const double z = uniform(rng, -s.jitter, s.jitter);
        for (int k = 0; k < 3; ++k) row[k] = p.center[k] + x * p.u[k] + y * p.v[k] + z * p.normal[k];
        fill_signals(p.normal);
        pc.add(row);
    }
    return pc;
}

double mean_window_occupancy(const SparseVoxelLevel& level, int window_size) {
    const auto part = partition_windows(level, window_size, false);
    if (part.windows.empty()) return 0.0;
    return static_cast<double>(level.size()) / static_cast<double>(part.windows.size());
}

OccupancyFit fit_occupancy(const SparseVoxelLevel& level, const std::vector<int>& window_sizes) {
    if (window_sizes.size() < 2) throw InputError("fit_occupancy: need at least two window sizes");
    OccupancyFit fit;
    fit.window_sizes = window_sizes;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int m : window_sizes) {
        const double occ = mean_window_occupancy(level, m);
        fit.occupancy.push_back(occ);
        const double x = std::log(static_cast<double>(m)), y = std::log(occ);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(window_sizes.size());
    fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return fit;
}

std::string_view to_string(SweepVariable v) {
    switch (v) {
        case SweepVariable::WidthRatio: return "width-ratio";
        case SweepVariable::Depth: return "depth";
        case SweepVariable::Heads: return "heads";
        case SweepVariable::WindowSize: return "window-size";
    }
    return "?";
}

SweepVariable parse_sweep_variable(std::string_view name) {
    if (name == "width-ratio") return SweepVariable::WidthRatio;
    if (name == "depth") return SweepVariable::Depth;
    if (name == "heads") return SweepVariable::Heads;
    if (name == "window-size") return SweepVariable::WindowSize;
    throw InputError(
        fmt::format("sweep spec: field 'variable': unknown value '{}' (expected width-ratio, depth, heads or "
                    "window-size)",
                    name));
}

BenchPoint bench_point(const SweepSpec& spec, double value) {
    BenchPoint p{spec.base.channels, spec.base.heads, spec.base.depth, spec.base.window_size};
    switch (spec.variable) {
        case SweepVariable::WidthRatio: {
            const double units = std::round(static_cast<double>(spec.base.channels) * value /
                                            static_cast<double>(spec.base.heads));
            p.channels = static_cast<std::size_t>(std::max(1.0, units)) * spec.base.heads;
            break;
        }
        case SweepVariable::Heads:
            p.heads = static_cast<std::size_t>(std::lround(static_cast<double>(spec.base.heads) * value));
            break;
        case SweepVariable::Depth: p.depth = static_cast<int>(std::lround(value)); break;
        case SweepVariable::WindowSize: p.window_size = static_cast<int>(std::lround(value)); break;
    }
    return p;
}

void SweepSpec::validate() const {
    if (values.empty()) throw InputError("sweep spec: field 'values': must not be empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] > 0.0) || !std::isfinite(values[i])) {
            throw InputError(fmt::format("sweep spec: field 'values[{}]': must be positive", i));
        }
        if (i > 0 && !(values[i] > values[i - 1])) {
            throw InputError("sweep spec: field 'values': must be strictly increasing");
        }
        const bool integral = variable == SweepVariable::Depth || variable == SweepVariable::WindowSize;
        if (integral && values[i] != std::round(values[i])) {
            throw InputError(fmt::format("sweep spec: field 'values[{}]': {} must be an integer", i, to_string(variable)));
        }
    }
    if (base.channels == 0) throw InputError("sweep spec: field 'base.channels': must be positive");
    if (base.heads == 0) throw InputError("sweep spec: field 'base.heads': must be positive");
    if (base.depth < 1) throw InputError("sweep spec: field 'base.depth': must be at least 1");
    if (base.window_size < 1) throw InputError("sweep spec: field 'base.window_size': must be at least 1");
    if (!(base.voxel_size > 0.0)) throw InputError("sweep spec: field 'base.voxel_size': must be positive");
    if (base.points == 0) throw InputError("sweep spec: field 'base.points': must be positive");
    if (base.sampler.channels != 6 && base.sampler.channels != 9) {
        throw InputError("sweep spec: field 'base.signal_channels': must be 6 or 9");
    }
    if (repetitions < 1) throw InputError("sweep spec: field 'repetitions': must be at least 1");
    if (engines.empty()) throw InputError("sweep spec: field 'engines': must not be empty");
    if (std::set<AttentionEngine>(engines.begin(), engines.end()).size() != engines.size()) {
        throw InputError("sweep spec: field 'engines': duplicate engine");
    }
    if (threads == 0) throw InputError("sweep spec: field 'threads': must be at least 1");
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto p = bench_point(*this, values[i]);
        if (p.heads == 0 || p.channels % p.heads != 0) {
            throw InputError(fmt::format("sweep spec: field 'values[{}]': {} channels not divisible by {} heads", i,
                                         p.channels, p.heads));
        }
        if (p.depth < 1 || p.window_size < 1) {
            throw InputError(fmt::format("sweep spec: field 'values[{}]': invalid stack", i));
        }
    }
}

namespace {

template <class T>
T spec_scalar(const YAML::Node& node, const std::string& field) {
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw InputError(fmt::format("sweep spec: field '{}': invalid value", field));
    }
}

void parse_sampler(const YAML::Node& node, SceneSampler& s) {
    if (!node.IsMap()) throw InputError("sweep spec: field 'base.sampler': must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        const std::string field = "base.sampler." + key;
        if (key == "mode") s.mode = parse_sampler_mode(spec_scalar<std::string>(kv.second, field));
        else if (key == "extent") s.extent = spec_scalar<double>(kv.second, field);
        else if (key == "patches") s.patches = spec_scalar<std::size_t>(kv.second, field);
        else if (key == "patch_min") s.patch_min = spec_scalar<double>(kv.second, field);
        else if (key == "patch_max") s.patch_max = spec_scalar<double>(kv.second, field);
        else if (key == "jitter") s.jitter = spec_scalar<double>(kv.second, field);
        else throw InputError(fmt::format("sweep spec: unknown field '{}'", field));
    }
}

void parse_base(const YAML::Node& node, BenchBase& b) {
    if (!node.IsMap()) throw InputError("sweep spec: field 'base': must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        const std::string field = "base." + key;
        if (key == "channels") b.channels = spec_scalar<std::size_t>(kv.second, field);
        else if (key == "heads") b.heads = spec_scalar<std::size_t>(kv.second, field);
        else if (key == "depth") b.depth = spec_scalar<int>(kv.second, field);
        else if (key == "window_size") b.window_size = spec_scalar<int>(kv.second, field);
        else if (key == "voxel_size") b.voxel_size = spec_scalar<double>(kv.second, field);
        else if (key == "points") b.points = spec_scalar<std::size_t>(kv.second, field);
        else if (key == "signal_channels") b.sampler.channels = spec_scalar<std::size_t>(kv.second, field);
        else if (key == "sampler") parse_sampler(kv.second, b.sampler);
        else throw InputError(fmt::format("sweep spec: unknown field '{}'", field));
    }
}

}  // namespace

SweepSpec parse_sweep_spec(const std::string& yaml) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml);
    } catch (const YAML::Exception& e) {
        throw InputError(fmt::format("sweep spec: malformed YAML at line {}: {}", e.mark.line + 1, e.msg));
    }
    if (!root.IsMap()) throw InputError("sweep spec: expected a mapping of fields");
    if (!root["variable"]) throw InputError("sweep spec: field 'variable': missing");
    if (!root["values"]) throw InputError("sweep spec: field 'values': missing");
    SweepSpec spec;
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        const YAML::Node& v = kv.second;
        if (key == "variable") {
            spec.variable = parse_sweep_variable(spec_scalar<std::string>(v, key));
        } else if (key == "values") {
            if (!v.IsSequence()) throw InputError("sweep spec: field 'values': must be a list");
            spec.values.clear();
            for (std::size_t i = 0; i < v.size(); ++i) {
                spec.values.push_back(spec_scalar<double>(v[i], fmt::format("values[{}]", i)));
            }
        } else if (key == "repetitions") {
            spec.repetitions = spec_scalar<int>(v, key);
        } else if (key == "engines") {
            if (!v.IsSequence()) throw InputError("sweep spec: field 'engines': must be a list");
            spec.engines.clear();
            for (std::size_t i = 0; i < v.size(); ++i) {
                try {
                    spec.engines.push_back(parse_engine(spec_scalar<std::string>(v[i], key)));
                } catch (const InputError&) {
                    throw InputError(fmt::format("sweep spec: field 'engines[{}]': expected vanilla or streaming", i));
                }
            }
        } else if (key == "threads") {
            spec.threads = spec_scalar<std::size_t>(v, key);
        } else if (key == "seed") {
            spec.seed = spec_scalar<std::uint64_t>(v, key);
        } else if (key == "base") {
            parse_base(v, spec.base);
        } else {
            throw InputError(fmt::format("sweep spec: unknown field '{}'", key));
        }
    }
    spec.base.sampler.seed = spec.seed;
    spec.validate();
    return spec;
}

SweepSpec load_sweep_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError(fmt::format("cannot open sweep spec '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_sweep_spec(ss.str());
}

SparseVoxelLevel bench_level(const SweepSpec& spec) {
    SceneSampler sampler = spec.base.sampler;
    sampler.seed = spec.seed;
    const auto pc = sample_scene(sampler, spec.base.points);
    return voxelize(pc, spec.base.voxel_size, derive_seed(spec.seed, "voxelize"));
}

namespace {

struct RunOutcome {
    Tensor output;
    bool finite = true;
    double ms = 0.0;
};

RunOutcome run_stack(Parameter& x, const Tensor& weights, const Tensor& signals, const WindowPartition& regular,
                     const WindowPartition& shifted, std::vector<BlockParams>& blocks, AttentionEngine engine,
                     std::size_t threads, MemoryTracker* tracker) {
    x.zero_grad();
    for (auto& b : blocks) b.visit([](Parameter& p) { p.zero_grad(); });
    RunOutcome r;
    {
        TrackerScope scope(tracker);
        const auto t0 = std::chrono::steady_clock::now();
        Tape tape;
        Var h = tape.param(x);
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            const auto& part = block_is_shifted(static_cast<int>(b)) ? shifted : regular;
            h = swin_block(tape, h, signals, part, blocks[b], {engine, threads});
        }
        tape.backward(weighted_sum(tape, h, weights));
        r.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        TrackerScope untracked(nullptr);
        r.output = tape.value(h);
    }
    r.finite = r.output.all_finite() && x.grad.all_finite();
    return r;
}

}  // namespace

SweepResult run_sweep(const SweepSpec& spec) {
    spec.validate();
    const SparseVoxelLevel level = bench_level(spec);
    const Tensor signals = level_signals(level);
    SweepResult result;

    for (double value : spec.values) {
        const BenchPoint pt = bench_point(spec, value);
        const auto regular = partition_windows(level, pt.window_size, false);
        const auto shifted = partition_windows(level, pt.window_size, true);

        BackboneConfig config;
        config.channels = {pt.channels};
        config.heads = {pt.heads};
        config.depths = {pt.depth};
        config.window_sizes = {pt.window_size};
        config.strides = {};
        config.finest_voxel_size = spec.base.voxel_size;
        config.signal_channels = level.signal_channels();
        Backbone model(config, spec.seed);
        Rng rng(derive_seed(spec.seed, "tables"));
        for (auto& b : model.blocks[0]) b.attention.tables.visit([&](Parameter& p) { fill_uniform(p.value, rng, -0.1, 0.1); });
        Rng frng(derive_seed(spec.seed, "features"));
        Parameter x("x", Tensor::matrix(level.size(), pt.channels));
        fill_uniform(x.value, frng, -1.0, 1.0);
        Tensor weights = Tensor::matrix(level.size(), pt.channels);
        fill_uniform(weights, frng, -1.0, 1.0);

        std::vector<std::pair<AttentionEngine, Tensor>> outputs;
        for (AttentionEngine engine : spec.engines) {
            // Warm-up pass, excluded from timing; its output feeds the engine comparison.
            auto warm = run_stack(x, weights, signals, regular, shifted, model.blocks[0], engine, spec.threads, nullptr);
            outputs.emplace_back(engine, warm.output);
            for (int rep = 0; rep < spec.repetitions; ++rep) {
                MemoryTracker tracker;
                auto run = run_stack(x, weights, signals, regular, shifted, model.blocks[0], engine, spec.threads,
                                     &tracker);
                BenchRecord rec;
                rec.variable = std::string(to_string(spec.variable));
                rec.value = value;
                rec.engine = engine;
                rec.rep = rep;
                rec.peak_bytes = tracker.total().peak_bytes;
                rec.alloc_count = tracker.total().alloc_count;
                rec.time_ms = spec.threads > 1 ? 0.0 : run.ms;
                rec.voxels = level.size();
                rec.windows = regular.windows.size();
                rec.coeff_bytes = tracker.stats(MemoryTag::Coefficients).peak_bytes;
                rec.status = run.finite ? "ok" : "non-finite";
                result.records.push_back(std::move(rec));
            }
        }
        for (std::size_t e = 1; e < outputs.size(); ++e) {
            const double diff = relative_error_inf(outputs[e].second, outputs[0].second);
            result.max_engine_difference = std::max(result.max_engine_difference, diff);
            if (diff > 1e-10) {
                for (auto& rec : result.records)
                    if (rec.value == value && rec.engine == outputs[e].first && rec.status == "ok") rec.status = "mismatch";
            }
        }
    }
    return result;
}

std::string records_to_csv(const std::vector<BenchRecord>& records) {
    std::string out(kBenchCsvHeader);
    out += '\n';
    for (const auto& r : records) {
        out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", r.variable, r.value, to_string(r.engine), r.rep,
                           r.peak_bytes, r.alloc_count, r.time_ms, r.voxels, r.windows, r.coeff_bytes, r.status);
    }
    return out;
}

namespace {

template <class T>
T parse_field(std::string_view s, std::size_t line, const char* name) {
    T v{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(fmt::format("line {}: invalid {} '{}'", line, name, s), line);
    }
    return v;
}

}  // namespace

std::vector<BenchRecord> parse_records_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    std::vector<BenchRecord> out;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (n == 1) {
            if (line != kBenchCsvHeader) throw ParseError("line 1: unexpected CSV header", 1);
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            f.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (f.size() != 11) throw ParseError(fmt::format("line {}: expected 11 fields, got {}", n, f.size()), n);
        BenchRecord r;
        r.variable = std::string(f[0]);
        r.value = parse_field<double>(f[1], n, "value");
        try {
            r.engine = parse_engine(f[2]);
        } catch (const InputError&) {
            throw ParseError(fmt::format("line {}: unknown engine '{}'", n, f[2]), n);
        }
        r.rep = parse_field<int>(f[3], n, "rep");
        r.peak_bytes = parse_field<std::int64_t>(f[4], n, "peak_bytes");
        r.alloc_count = parse_field<std::int64_t>(f[5], n, "alloc_count");
        r.time_ms = parse_field<double>(f[6], n, "time_ms");
        r.voxels = parse_field<std::size_t>(f[7], n, "voxels");
        r.windows = parse_field<std::size_t>(f[8], n, "windows");
        r.coeff_bytes = parse_field<std::int64_t>(f[9], n, "coeff_bytes");
        r.status = std::string(f[10]);
        out.push_back(std::move(r));
    }
    if (n == 0) throw ParseError("line 1: missing CSV header", 1);
    return out;
}

std::vector<SummaryRow> summarize(const std::vector<BenchRecord>& records) {
    struct Acc {
        double peak = 0, time = 0, coeff = 0;
        int count = 0;
    };
    std::map<double, std::map<AttentionEngine, Acc>> acc;
    for (const auto& r : records) {
        auto& a = acc[r.value][r.engine];
        a.peak += static_cast<double>(r.peak_bytes);
        a.time += r.time_ms;
        a.coeff += static_cast<double>(r.coeff_bytes);
        ++a.count;
    }
    std::vector<SummaryRow> rows;
    for (const auto& [value, engines] : acc) {
        SummaryRow row;
        row.value = value;
        for (const auto& [engine, a] : engines) {
            const double k = a.count;
            if (engine == AttentionEngine::Vanilla) {
                row.vanilla_peak = a.peak / k;
                row.vanilla_time_ms = a.time / k;
                row.vanilla_coeff = a.coeff / k;
            } else {
                row.streaming_peak = a.peak / k;
                row.streaming_time_ms = a.time / k;
                row.streaming_coeff = a.coeff / k;
            }
        }
        if (engines.size() == 2 && row.streaming_peak > 0.0) row.ratio = row.vanilla_peak / row.streaming_peak;
        rows.push_back(row);
    }
    return rows;
}

Report emit_report(const std::vector<BenchRecord>& records) {
    if (records.empty()) throw UsageError("emit_report: no records");
    Report report;
    report.csv = records_to_csv(records);
    std::string s = fmt::format("{:>10} {:>16} {:>16} {:>8} {:>12} {:>12}\n", records.front().variable,
                                "vanilla_peak_B", "streaming_peak_B", "ratio", "vanilla_ms", "streaming_ms");
    for (const auto& row : summarize(records)) {
        s += fmt::format("{:>10} {:>16.0f} {:>16.0f} {:>8.3f} {:>12.2f} {:>12.2f}\n", row.value, row.vanilla_peak,
                         row.streaming_peak, row.ratio, row.vanilla_time_ms, row.streaming_time_ms);
    }
    std::size_t flagged = 0;
    for (const auto& r : records) flagged += r.status != "ok" ? 1 : 0;
    if (flagged) s += fmt::format("{} record(s) flagged (non-finite or engine mismatch)\n", flagged);
    report.summary = std::move(s);
    return report;
}

std::vector<std::string> write_plot_data(const std::string& prefix, const std::vector<BenchRecord>& records) {
    std::vector<std::string> paths;
    const auto rows = summarize(records);
    for (AttentionEngine engine : {AttentionEngine::Vanilla, AttentionEngine::Streaming}) {
        const bool present = std::any_of(records.begin(), records.end(), [&](const auto& r) { return r.engine == engine; });
        if (!present) continue;
        const std::string path = fmt::format("{}_{}.dat", prefix, to_string(engine));
        std::ofstream out(path);
        if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path));
        for (const auto& row : rows) {
            out << fmt::format("{} {}\n", row.value,
                               engine == AttentionEngine::Vanilla ? row.vanilla_peak : row.streaming_peak);
        }
        paths.push_back(path);
    }
    return paths;
}

}  // namespace swin3d
