// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "swin3d/errors.hpp"

namespace swin3d {

// --- Configuration ---------------------------------------------------------

double BackboneConfig::voxel_size(std::size_t stage) const {
    double size = finest_voxel_size;
    for (std::size_t l = 0; l < stage; ++l) size *= strides.at(l);
    return size;
}

double BackboneConfig::window_height(std::size_t stage) const {
    return window_sizes.at(stage) * voxel_size(stage);
}

void BackboneConfig::validate() const {
    const std::size_t s = stages();
    if (s == 0) throw InputError("config: channels must list at least one stage");
    auto require_len = [&](std::size_t n, const char* field, std::size_t expected) {
        if (n != expected) {
            throw InputError(fmt::format("config: {} has {} entries, expected {}", field, n, expected));
        }
    };
    require_len(heads.size(), "heads", s);
    require_len(depths.size(), "depths", s);
    require_len(window_sizes.size(), "window_sizes", s);
    require_len(strides.size(), "strides", s - 1);
    for (std::size_t l = 0; l < s; ++l) {
        if (channels[l] == 0) throw InputError(fmt::format("config: channels[{}] must be positive", l));
        if (heads[l] == 0 || channels[l] % heads[l] != 0) {
            throw InputError(
                fmt::format("config: channels[{}] = {} not divisible by heads[{}] = {}", l, channels[l], l, heads[l]));
        }
        if (depths[l] < 1) throw InputError(fmt::format("config: depths[{}] must be at least 1", l));
        if (window_sizes[l] < 1) throw InputError(fmt::format("config: window_sizes[{}] must be at least 1", l));
    }
    for (std::size_t l = 0; l + 1 < s; ++l) {
        if (strides[l] < 1) throw InputError(fmt::format("config: strides[{}] must be at least 1", l));
    }
    if (!(finest_voxel_size > 0.0) || !std::isfinite(finest_voxel_size)) {
        throw InputError("config: finest_voxel_size must be positive");
    }
    if (knn == 0) throw InputError("config: knn must be positive");
    if (signal_channels != 6 && signal_channels != 9) {
        throw InputError(fmt::format("config: signal_channels must be 6 or 9, got {}", signal_channels));
    }
    if (num_classes == 0) throw InputError("config: num_classes must be positive");
    if (mlp_ratio == 0) throw InputError("config: mlp_ratio must be positive");
}

std::vector<std::string> backbone_preset_names() { return {"swin3d-s", "swin3d-l", "toy"}; }

BackboneConfig backbone_preset(std::string_view name) {
    BackboneConfig c;
    c.name = std::string(name);
    if (name == "swin3d-s" || name == "swin3d-l") {
        c.depths = {2, 4, 9, 4, 4};
        c.window_sizes = {5, 7, 7, 7, 7};
        c.strides = {3, 2, 2, 2};
        c.finest_voxel_size = 0.02;
        c.knn = 16;
        if (name == "swin3d-s") {
            c.channels = {48, 96, 192, 384, 384};
            c.heads = {6, 6, 12, 24, 24};
        } else {
            c.channels = {80, 160, 320, 640, 640};
            c.heads = {10, 10, 20, 40, 40};
        }
        return c;
    }
    if (name == "toy") {
        c.channels = {8, 16, 16, 16, 16};
        c.heads = {2, 2, 2, 2, 2};
        c.depths = {2, 2, 2, 2, 2};
        c.window_sizes = {3, 3, 3, 3, 3};
        c.strides = {3, 2, 2, 2};
        c.finest_voxel_size = 0.04;
        c.knn = 16;
        return c;
    }
    throw InputError(fmt::format("unknown backbone preset '{}' (expected swin3d-s, swin3d-l or toy)", name));
}

namespace {

template <class T>
T yaml_scalar(const YAML::Node& node, const std::string& field) {
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw InputError(fmt::format("config: field '{}' has an invalid value", field));
    }
}

template <class T>
std::vector<T> yaml_list(const YAML::Node& node, const std::string& field) {
    if (!node.IsSequence()) throw InputError(fmt::format("config: field '{}' must be a list", field));
    std::vector<T> out;
    for (std::size_t i = 0; i < node.size(); ++i) {
        const auto v = yaml_scalar<long long>(node[i], fmt::format("{}[{}]", field, i));
        if (v < 0) throw InputError(fmt::format("config: field '{}[{}]' must be non-negative", field, i));
        out.push_back(static_cast<T>(v));
    }
    return out;
}

}  // namespace

BackboneConfig parse_backbone_config(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw InputError(fmt::format("config: malformed YAML at line {}: {}", e.mark.line + 1, e.msg));
    }
    if (!root.IsMap()) throw InputError("config: expected a mapping of fields");

    BackboneConfig c;
    if (root["preset"]) c = backbone_preset(yaml_scalar<std::string>(root["preset"], "preset"));
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        const YAML::Node& v = kv.second;
        if (key == "preset") continue;
        if (key == "name") c.name = yaml_scalar<std::string>(v, key);
        else if (key == "channels") c.channels = yaml_list<std::size_t>(v, key);
        else if (key == "heads") c.heads = yaml_list<std::size_t>(v, key);
        else if (key == "depths") c.depths = yaml_list<int>(v, key);
        else if (key == "window_sizes") c.window_sizes = yaml_list<int>(v, key);
        else if (key == "strides") c.strides = yaml_list<int>(v, key);
        else if (key == "finest_voxel_size") c.finest_voxel_size = yaml_scalar<double>(v, key);
        else if (key == "knn") c.knn = yaml_scalar<std::size_t>(v, key);
        else if (key == "signal_channels") c.signal_channels = yaml_scalar<std::size_t>(v, key);
        else if (key == "num_classes") c.num_classes = yaml_scalar<std::size_t>(v, key);
        else if (key == "mlp_ratio") c.mlp_ratio = yaml_scalar<std::size_t>(v, key);
        else throw InputError(fmt::format("config: unknown field '{}'", key));
    }
    c.validate();
    return c;
}

BackboneConfig load_backbone_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError(fmt::format("cannot open config '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_backbone_config(ss.str());
}

std::string backbone_config_yaml(const BackboneConfig& c) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << c.name;
    out << YAML::Key << "channels" << YAML::Value << YAML::Flow << c.channels;
    out << YAML::Key << "heads" << YAML::Value << YAML::Flow << c.heads;
    out << YAML::Key << "depths" << YAML::Value << YAML::Flow << c.depths;
    out << YAML::Key << "window_sizes" << YAML::Value << YAML::Flow << c.window_sizes;
    out << YAML::Key << "strides" << YAML::Value << YAML::Flow << c.strides;
    out << YAML::Key << "finest_voxel_size" << YAML::Value << c.finest_voxel_size;
    out << YAML::Key << "knn" << YAML::Value << c.knn;
    out << YAML::Key << "signal_channels" << YAML::Value << c.signal_channels;
    out << YAML::Key << "num_classes" << YAML::Value << c.num_classes;
    out << YAML::Key << "mlp_ratio" << YAML::Value << c.mlp_ratio;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

// --- Parameters ------------------------------------------------------------

void EmbedParams::visit(const ParameterVisitor& fn) {
    fn(weight);
    fn(bn_gamma);
    fn(bn_beta);
}

void BlockParams::visit(const ParameterVisitor& fn) {
    fn(ln1_gamma);
    fn(ln1_beta);
    attention.visit(fn);
    fn(ln2_gamma);
    fn(ln2_beta);
    fn(mlp_w1);
    fn(mlp_b1);
    fn(mlp_w2);
    fn(mlp_b2);
}

void DownsampleParams::visit(const ParameterVisitor& fn) {
    fn(ln_gamma);
    fn(ln_beta);
    fn(weight);
    fn(bias);
}

void DecoderParams::visit(const ParameterVisitor& fn) {
    for (std::size_t l = 0; l < up_weight.size(); ++l) {
        fn(up_weight[l]);
        fn(up_bias[l]);
    }
    fn(head_weight);
    fn(head_bias);
}

namespace {

Parameter ones(const std::string& name, std::size_t n) { return Parameter(name, Tensor::filled({n}, 1.0)); }
Parameter zeros(const std::string& name, std::size_t n) { return Parameter(name, Tensor::zeros({n})); }

Parameter dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double stddev) {
    Parameter p(name, Tensor::matrix(in, out));
    fill_truncated_normal(p.value, rng, stddev);
    return p;
}

double fan_in_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

constexpr double kTransformerInitStd = 0.02;

}  // namespace

Backbone::Backbone(BackboneConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(derive_seed(seed, "init"));
    const auto& c = config_;
    const std::size_t m = c.signal_channels;
    const auto layout = signal_layout(m);

    embed.weight = dense("embed.weight", 27 * m, c.channels[0], rng, fan_in_std(27 * m));
    embed.bn_gamma = ones("embed.bn.gamma", c.channels[0]);
    embed.bn_beta = zeros("embed.bn.beta", c.channels[0]);
    embed.running.mean = Tensor::zeros({c.channels[0]});
    embed.running.var = Tensor::filled({c.channels[0]}, 1.0);

    blocks.resize(c.stages());
    for (std::size_t l = 0; l < c.stages(); ++l) {
        const std::size_t ch = c.channels[l], hidden = ch * c.mlp_ratio;
        for (int b = 0; b < c.depths[l]; ++b) {
            const std::string prefix = fmt::format("stage{}.block{}", l + 1, b);
            BlockParams p;
            p.ln1_gamma = ones(prefix + ".ln1.gamma", ch);
            p.ln1_beta = zeros(prefix + ".ln1.beta", ch);
            p.attention = AttentionParams(prefix + ".attn", ch, c.heads[l], layout, c.window_height(l));
            p.attention.init(rng, kTransformerInitStd);
            p.ln2_gamma = ones(prefix + ".ln2.gamma", ch);
            p.ln2_beta = zeros(prefix + ".ln2.beta", ch);
            p.mlp_w1 = dense(prefix + ".mlp.w1", ch, hidden, rng, kTransformerInitStd);
            p.mlp_b1 = zeros(prefix + ".mlp.b1", hidden);
            p.mlp_w2 = dense(prefix + ".mlp.w2", hidden, ch, rng, kTransformerInitStd);
            p.mlp_b2 = zeros(prefix + ".mlp.b2", ch);
            blocks[l].push_back(std::move(p));
        }
    }
    for (std::size_t l = 0; l + 1 < c.stages(); ++l) {
        const std::string prefix = fmt::format("down{}", l + 1);
        DownsampleParams p;
        p.ln_gamma = ones(prefix + ".ln.gamma", c.channels[l]);
        p.ln_beta = zeros(prefix + ".ln.beta", c.channels[l]);
        p.weight = dense(prefix + ".weight", c.channels[l], c.channels[l + 1], rng, fan_in_std(c.channels[l]));
        p.bias = zeros(prefix + ".bias", c.channels[l + 1]);
        downsample.push_back(std::move(p));
    }
    for (std::size_t l = 0; l + 1 < c.stages(); ++l) {
        const std::string prefix = fmt::format("decoder.up{}", l + 1);
        decoder.up_weight.push_back(
            dense(prefix + ".weight", c.channels[l + 1], c.channels[l], rng, fan_in_std(c.channels[l + 1])));
        decoder.up_bias.push_back(zeros(prefix + ".bias", c.channels[l]));
    }
    decoder.head_weight = dense("decoder.head.weight", c.channels[0], c.num_classes, rng, fan_in_std(c.channels[0]));
    decoder.head_bias = zeros("decoder.head.bias", c.num_classes);
}

void Backbone::visit(const ParameterVisitor& fn) {
    embed.visit(fn);
    for (auto& stage : blocks)
        for (auto& b : stage) b.visit(fn);
    for (auto& d : downsample) d.visit(fn);
    decoder.visit(fn);
}

std::size_t Backbone::parameter_count() {
    std::size_t n = 0;
    visit([&](Parameter& p) { n += p.value.size(); });
    return n;
}

// --- Scene geometry --------------------------------------------------------

Tensor embed_inputs(const SparseVoxelLevel& level) {
    const std::size_t m = level.signal_channels();
    Tensor x = Tensor::matrix(level.size(), m);
    for (std::size_t i = 0; i < level.size(); ++i) {
        const auto c = level.center(i);
        const auto& r = level[i];
        for (std::size_t a = 0; a < 3; ++a) x(i, a) = r.rep_point[a] - c[a];
        for (std::size_t a = 3; a < m; ++a) x(i, a) = r.rep_signal[a];
    }
    return x;
}

Tensor neighbor_columns(const SparseVoxelLevel& level, const Tensor& inputs) {
    const std::size_t m = inputs.cols();
    Tensor cols = Tensor::matrix(level.size(), 27 * m);
    for (std::size_t i = 0; i < level.size(); ++i) {
        const auto& c = level[i].coord;
        std::size_t o = 0;
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz, ++o) {
                    const auto j = level.find({c[0] + dx, c[1] + dy, c[2] + dz});
                    if (!j) continue;
                    std::copy_n(inputs.data() + *j * m, m, cols.data() + i * 27 * m + o * m);
                }
    }
    return cols;
}

namespace {

// Squared distance between a fine voxel center and a coarse voxel center,
// in units of half a fine voxel so that it is an exact integer.
std::int64_t doubled_distance2(const VoxelCoord& fine, const VoxelCoord& coarse, std::int64_t stride) {
    std::int64_t d2 = 0;
    for (int a = 0; a < 3; ++a) {
        const std::int64_t d = (2 * coarse[a] + 1) * stride - (2 * fine[a] + 1);
        d2 += d * d;
    }
    return d2;
}

struct Candidate {
    std::int64_t d2;
    std::size_t index;
    bool operator<(const Candidate& o) const noexcept { return d2 != o.d2 ? d2 < o.d2 : index < o.index; }
};

std::vector<std::size_t> take_nearest(std::vector<Candidate>& cand, std::size_t k) {
    const std::size_t n = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n), cand.end());
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = cand[i].index;
    return out;
}

}  // namespace

std::vector<std::vector<std::size_t>> knn_neighbors(const SparseVoxelLevel& fine, const SparseVoxelLevel& coarse,
                                                    int stride, std::size_t k) {
    if (fine.empty()) throw InputError("knn_pool_downsample: empty fine level");
    if (stride < 1 || k == 0) throw InputError("knn_pool_downsample: stride and k must be positive");
    const std::int64_t t = stride;
    const std::size_t nf = fine.size();
    std::vector<std::vector<std::size_t>> groups(coarse.size());

    for (std::size_t ci = 0; ci < coarse.size(); ++ci) {
        const auto& cc = coarse[ci].coord;
        std::vector<Candidate> cand;
        bool done = false;
        for (std::int64_t s = 0; !done; ++s) {
            const std::int64_t side = t + 2 * s;
            if (static_cast<double>(side) * static_cast<double>(side) * static_cast<double>(side) >
                static_cast<double>(nf)) {
                // Scanning the cube would cost more than a full pass.
                cand.clear();
                for (std::size_t f = 0; f < nf; ++f) cand.push_back({doubled_distance2(fine[f].coord, cc, t), f});
                break;
            }
            std::array<std::int64_t, 3> lo{}, hi{};
            for (int a = 0; a < 3; ++a) {
                lo[a] = cc[a] * t - s;
                hi[a] = cc[a] * t + t - 1 + s;
            }
            // Visit only cells of shell s (outside the cube of shell s - 1).
            auto interior = [&](int a, std::int64_t v) { return s > 0 && v > lo[a] && v < hi[a]; };
            for (std::int64_t x = lo[0]; x <= hi[0]; ++x)
                for (std::int64_t y = lo[1]; y <= hi[1]; ++y) {
                    const bool inner_xy = interior(0, x) && interior(1, y);
                    const std::int64_t zstep = inner_xy ? std::max<std::int64_t>(hi[2] - lo[2], 1) : 1;
                    for (std::int64_t z = lo[2]; z <= hi[2]; z += zstep) {
                        if (const auto f = fine.find({x, y, z})) {
                            cand.push_back({doubled_distance2(fine[*f].coord, cc, t), *f});
                        }
                    }
                }
            if (cand.size() == nf) break;
            if (cand.size() >= k) {
                std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end());
                const std::int64_t bound = t + 2 * s + 1;
                done = cand[k - 1].d2 < bound * bound;
            }
        }
        groups[ci] = take_nearest(cand, k);
    }
    return groups;
}

PreparedScene prepare_scene(const PointCloud& pc, const BackboneConfig& config, std::uint64_t seed) {
    config.validate();
    if (pc.channels() != config.signal_channels) {
        throw DimensionError(fmt::format("point cloud has {} channels, config expects {}", pc.channels(),
                                         config.signal_channels));
    }
    PreparedScene scene;
    auto base = voxelize(pc, config.finest_voxel_size, derive_seed(seed, "voxelize"));
    scene.hierarchy = build_hierarchy(std::move(base), static_cast<int>(config.stages()), config.strides);
    const auto& levels = scene.hierarchy.levels;
    for (std::size_t l = 0; l < config.stages(); ++l) {
        scene.signals.push_back(level_signals(levels[l]));
        scene.regular.push_back(partition_windows(levels[l], config.window_sizes[l], false));
        scene.shifted.push_back(partition_windows(levels[l], config.window_sizes[l], true));
    }
    for (std::size_t l = 0; l + 1 < config.stages(); ++l) {
        scene.knn.push_back(knn_neighbors(levels[l], levels[l + 1], config.strides[l], config.knn));
    }
    scene.embed_columns = neighbor_columns(levels[0], embed_inputs(levels[0]));
    return scene;
}

// --- Forward ---------------------------------------------------------------

Var initial_embed(Tape& tape, const PreparedScene& scene, Backbone& model) {
    auto& e = model.embed;
    Var cols = tape.input(scene.embed_columns);
    Var y = matmul(tape, cols, tape.param(e.weight));
    Var gamma = tape.param(e.bn_gamma), beta = tape.param(e.bn_beta);
    if (model.training) {
        BatchStats batch;
        y = batch_norm_train(tape, y, gamma, beta, &batch);
        e.running.mean.scale_inplace(e.momentum);
        batch.mean.scale_inplace(1.0 - e.momentum);
        e.running.mean.add_inplace(batch.mean);
        e.running.var.scale_inplace(e.momentum);
        batch.var.scale_inplace(1.0 - e.momentum);
        e.running.var.add_inplace(batch.var);
    } else {
        y = batch_norm_eval(tape, y, gamma, beta, e.running);
    }
    return relu(tape, y);
}

Var swin_block(Tape& tape, Var x, const Tensor& signals, const WindowPartition& partition, BlockParams& p,
               const ForwardOptions& options) {
    Var h = layer_norm(tape, x, tape.param(p.ln1_gamma), tape.param(p.ln1_beta));
    Var a = windowed_attention(tape, h, signals, partition, p.attention, {options.engine, options.threads});
    Var x1 = add(tape, x, a);
    Var h2 = layer_norm(tape, x1, tape.param(p.ln2_gamma), tape.param(p.ln2_beta));
    Var m = mlp_block(tape, h2, tape.param(p.mlp_w1), tape.param(p.mlp_b1), tape.param(p.mlp_w2),
                      tape.param(p.mlp_b2));
    return add(tape, x1, m);
}

Var knn_pool_downsample(Tape& tape, Var fine, const std::vector<std::vector<std::size_t>>& groups,
                        DownsampleParams& p) {
    if (tape.value(fine).rows() == 0) throw InputError("knn_pool_downsample: empty fine level");
    Var h = layer_norm(tape, fine, tape.param(p.ln_gamma), tape.param(p.ln_beta));
    Var lifted = linear(tape, h, tape.param(p.weight), tape.param(p.bias));
    return group_max(tape, lifted, groups);
}

std::vector<Var> encode(Tape& tape, const PreparedScene& scene, Backbone& model, const ForwardOptions& options) {
    const auto& c = model.config();
    if (scene.signals.size() != c.stages()) {
        throw DimensionError("encode: scene was prepared for a different stage count");
    }
    std::vector<Var> outputs;
    Var x = initial_embed(tape, scene, model);
    for (std::size_t l = 0; l < c.stages(); ++l) {
        for (int b = 0; b < c.depths[l]; ++b) {
            const auto& part = block_is_shifted(b) ? scene.shifted[l] : scene.regular[l];
            x = swin_block(tape, x, scene.signals[l], part, model.blocks[l][static_cast<std::size_t>(b)], options);
        }
        outputs.push_back(x);
        if (l + 1 < c.stages()) x = knn_pool_downsample(tape, x, scene.knn[l], model.downsample[l]);
    }
    return outputs;
}

Var decode_segmentation(Tape& tape, const PreparedScene& scene, const std::vector<Var>& stages,
                        Backbone& model) {
    if (stages.empty()) throw InputError("decode_segmentation: no encoder outputs");
    auto& d = model.decoder;
    Var x = stages.back();
    for (std::size_t l = stages.size() - 1; l-- > 0;) {
        Var up = gather_rows(tape, x, scene.hierarchy.parents[l]);
        Var proj = linear(tape, up, tape.param(d.up_weight[l]), tape.param(d.up_bias[l]));
        x = add(tape, proj, stages[l]);
    }
    return linear(tape, x, tape.param(d.head_weight), tape.param(d.head_bias));
}

std::vector<Tensor> encode_point_cloud(const PointCloud& pc, Backbone& model, std::uint64_t seed,
                                       const ForwardOptions& options) {
    const auto scene = prepare_scene(pc, model.config(), seed);
    Tape tape;
    std::vector<Tensor> out;
    for (Var v : encode(tape, scene, model, options)) out.push_back(tape.value(v));
    return out;
}

}  // namespace swin3d
