// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "swin3d/backbone.hpp"
#include "swin3d/bench.hpp"
#include "swin3d/errors.hpp"
#include "swin3d/point_cloud.hpp"
#include "swin3d/voxel_grid.hpp"

namespace swin3d::cli {
namespace {

struct Common {
    std::uint64_t seed = kDefaultSeed;
    std::size_t threads = 1;
    std::optional<std::string> engine;
    bool verbose = false;
    bool quiet = false;

    bool seed_set = false;
    bool threads_set = false;

    AttentionEngine engine_or(AttentionEngine fallback) const { return engine ? parse_engine(*engine) : fallback; }
};

struct VoxelizeArgs {
    std::string input;
    std::optional<double> voxel_size;
    std::optional<std::string> config;
    std::string preset = "swin3d-s";
    std::optional<std::string> out;
};

struct SelfcheckArgs {
    std::size_t windows = 100;
    std::size_t grids = 100;
    bool inject_fault = false;
};

struct TrainArgs {
    std::optional<std::string> config;
    int epochs = 50;
    std::size_t scenes = 6;
    std::size_t points = 240;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::optional<std::string> out;
    std::optional<std::string> loss_csv;
    std::optional<std::string> resume;
};

struct BenchArgs {
    std::string spec;
    std::optional<std::string> out;
    std::optional<std::string> plot_prefix;
};

BackboneConfig resolve_config(const std::optional<std::string>& path, const std::string& preset) {
    return path ? load_backbone_config(*path) : backbone_preset(preset);
}

int cmd_voxelize(const VoxelizeArgs& a, const Common& c, std::ostream& out) {
    BackboneConfig config = resolve_config(a.config, a.preset);
    if (a.voxel_size) config.finest_voxel_size = *a.voxel_size;
    config.validate();
    const PointCloud pc = read_point_cloud(a.input);
    if (pc.empty()) throw InputError(fmt::format("'{}' contains no points", a.input));
    auto base = voxelize(pc, config.finest_voxel_size, derive_seed(c.seed, "voxelize"));
    const auto h = build_hierarchy(std::move(base), static_cast<int>(config.stages()), config.strides);
    if (!c.quiet) {
        out << fmt::format("{} points, {} levels\n", pc.size(), h.levels.size());
        for (const auto& level : h.levels) {
            out << fmt::format("level {}: {} voxels (voxel size {})\n", level.level(), level.size(), level.voxel_size());
        }
    }
    if (a.out) {
        std::ofstream f(*a.out);
        if (!f) throw std::runtime_error(fmt::format("cannot write '{}'", *a.out));
        write_hierarchy_dump(f, h);
        if (c.verbose) out << fmt::format("wrote {}\n", *a.out);
    }
    return kSuccess;
}

int cmd_selfcheck(const SelfcheckArgs& a, const Common& c, std::ostream& out) {
    SelfcheckOptions o;
    o.seed = c.seed;
    o.windows = a.windows;
    o.grids = a.grids;
    o.threads = c.threads;
    o.inject_fault = a.inject_fault;
    if (o.windows == 0 || o.grids == 0) throw InputError("--windows and --grids must be positive");
    bool ok = true;
    for (const auto& r : run_selfcheck(o)) {
        ok = ok && r.passed;
        if (!c.quiet || !r.passed) out << fmt::format("{:<26} {}  {}\n", r.name, r.passed ? "PASS" : "FAIL", r.detail);
    }
    if (!c.quiet) out << (ok ? "all properties pass\n" : "some properties FAILED\n");
    return ok ? kSuccess : kValidationFailure;
}

int cmd_train(const TrainArgs& a, const Common& c, std::ostream& out) {
    const BackboneConfig config = resolve_config(a.config, "toy");
    config.validate();
    if (a.epochs < 0) throw InputError("--epochs must be non-negative");
    if (a.scenes == 0 || a.points == 0) throw InputError("--scenes and --points must be positive");
    TrainOptions opts;
    opts.epochs = a.epochs;
    opts.learning_rate = a.learning_rate;
    opts.momentum = a.momentum;
    opts.seed = c.seed;
    opts.forward = {c.engine_or(AttentionEngine::Streaming), c.threads};

    std::vector<PreparedScene> scenes;
    for (const auto& s : make_separable_dataset(a.scenes, a.points, c.seed, config.signal_channels)) {
        scenes.push_back(prepare_labeled_scene(s, config, c.seed));
    }
    Backbone model(config, c.seed);
    Trainer trainer(model, opts);
    if (a.resume) {
        trainer.restore(load_checkpoint(*a.resume));
        if (c.verbose) out << fmt::format("resumed at epoch {}\n", trainer.epoch());
    }

    std::optional<std::ofstream> csv;
    if (a.loss_csv) {
        csv.emplace(*a.loss_csv);
        if (!*csv) throw std::runtime_error(fmt::format("cannot write '{}'", *a.loss_csv));
        *csv << "epoch,loss\n";
    }
    while (trainer.epoch() < a.epochs) {
        const double loss = trainer.run_epoch(scenes);
        if (csv) *csv << fmt::format("{},{}\n", trainer.epoch(), loss);
        if (c.verbose) out << fmt::format("epoch {}: loss {:.6f}\n", trainer.epoch(), loss);
    }
    if (a.out) {
        save_checkpoint(*a.out, trainer.state());
        if (c.verbose) out << fmt::format("wrote {}\n", *a.out);
    }
    const double acc = segmentation_accuracy(model, scenes, opts.forward);
    if (!c.quiet) out << fmt::format("epochs: {}\naccuracy: {:.4f}\n", trainer.epoch(), acc);
    return kSuccess;
}

int cmd_bench(const BenchArgs& a, const Common& c, std::ostream& out) {
    SweepSpec spec = load_sweep_spec(a.spec);
    if (c.seed_set) spec.seed = c.seed;
    if (c.threads_set) spec.threads = c.threads;
    if (c.engine) spec.engines = {parse_engine(*c.engine)};
    spec.validate();
    const auto result = run_sweep(spec);
    const auto report = emit_report(result.records);
    if (a.out) {
        std::ofstream f(*a.out);
        if (!f) throw std::runtime_error(fmt::format("cannot write '{}'", *a.out));
        f << report.csv;
    } else {
        out << report.csv;
    }
    if (a.plot_prefix) write_plot_data(*a.plot_prefix, result.records);
    if (!c.quiet) {
        out << report.summary;
        if (spec.engines.size() > 1) out << fmt::format("max engine difference: {:.3e}\n", result.max_engine_difference);
    }
    return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse voxel windowed attention toolkit", "swin3d"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", "swin3d 0.1.0");

    Common c;
    app.add_option("--seed", c.seed, fmt::format("root seed for every random stream (default {})", kDefaultSeed));
    app.add_option("--threads", c.threads, "worker threads for window parallelism (default 1)")
        ->check(CLI::PositiveNumber);
    app.add_option("--engine", c.engine, "attention engine: vanilla or streaming")
        ->check(CLI::IsMember({"vanilla", "streaming"}));
    auto* verbose = app.add_flag("--verbose", c.verbose, "more output");
    app.add_flag("--quiet", c.quiet, "only failures and results files")->excludes(verbose);

    VoxelizeArgs va;
    auto* vox = app.add_subcommand("voxelize", "voxelize a point file and report per-level voxel counts");
    vox->add_option("--input", va.input, "point file (text or SVPC1 binary)")->required();
    vox->add_option("--voxel-size", va.voxel_size, "finest voxel size in meters (overrides the config)");
    vox->add_option("--config", va.config, "backbone config YAML giving levels and strides");
    vox->add_option("--preset", va.preset, "preset used when no config is given")
        ->check(CLI::IsMember(backbone_preset_names()));
    vox->add_option("--out", va.out, "write the hierarchy dump here");

    SelfcheckArgs sa;
    auto* self = app.add_subcommand("selfcheck", "run the invariant suite");
    self->add_option("--windows", sa.windows, "random windows for the engine equivalence check");
    self->add_option("--grids", sa.grids, "random grids for partition, hierarchy and kNN checks");
    self->add_flag("--inject-fault", sa.inject_fault, "perturb one analytic table gradient");

    TrainArgs ta;
    auto* train = app.add_subcommand("train-toy", "train on the separable synthetic segmentation task");
    train->add_option("--config", ta.config, "backbone config YAML (default: toy preset)");
    train->add_option("--epochs", ta.epochs, "total epochs (default 50)");
    train->add_option("--scenes", ta.scenes, "synthetic scenes (default 6)");
    train->add_option("--points", ta.points, "points per scene (default 240)");
    train->add_option("--lr", ta.learning_rate, "SGD learning rate (default 0.05)");
    train->add_option("--momentum", ta.momentum, "SGD momentum (default 0.9)");
    train->add_option("--out", ta.out, "checkpoint path");
    train->add_option("--loss-csv", ta.loss_csv, "per-epoch loss CSV path");
    train->add_option("--resume", ta.resume, "continue from this checkpoint");

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "run a memory/time sweep of the attention engines");
    bench->add_option("--spec", ba.spec, "sweep spec YAML")->required();
    bench->add_option("--out", ba.out, "CSV output path (default stdout)");
    bench->add_option("--plot-prefix", ba.plot_prefix, "write <prefix>_<engine>.dat plot files");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kValidationFailure;
    }
    c.seed_set = app.count("--seed") > 0;
    c.threads_set = app.count("--threads") > 0;

    try {
        if (*vox) return cmd_voxelize(va, c, out);
        if (*self) return cmd_selfcheck(sa, c, out);
        if (*train) return cmd_train(ta, c, out);
        return cmd_bench(ba, c, out);
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kValidationFailure;
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kValidationFailure;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kValidationFailure;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    }
}

}  // namespace swin3d::cli
