// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Five-stage sparse-voxel Swin encoder (sparse-conv embedding, alternating
// regular/shifted window blocks, kNN max-pool downsampling) with a small
// upsample-and-skip decoder for per-voxel segmentation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "swin3d/attention.hpp"
#include "swin3d/autodiff.hpp"
#include "swin3d/point_cloud.hpp"
#include "swin3d/voxel_grid.hpp"

namespace swin3d {

struct BackboneConfig {
    std::string name = "custom";
    std::vector<std::size_t> channels;
    std::vector<std::size_t> heads;
    std::vector<int> depths;
    std::vector<int> window_sizes;
    // One fewer than the stage count; strides[l] coarsens stage l into l + 1.
    std::vector<int> strides;
    double finest_voxel_size = 0.02;
    std::size_t knn = 16;
    std::size_t signal_channels = 6;
    std::size_t num_classes = 2;
    std::size_t mlp_ratio = 4;

    std::size_t stages() const noexcept { return channels.size(); }
    double voxel_size(std::size_t stage) const;
    double window_height(std::size_t stage) const;

    // Throws InputError naming the offending field.
    void validate() const;
};

// "swin3d-s", "swin3d-l" or "toy".
BackboneConfig backbone_preset(std::string_view name);
std::vector<std::string> backbone_preset_names();

// YAML mapping with the BackboneConfig field names. A `preset` key seeds
// the remaining fields from that preset.
BackboneConfig parse_backbone_config(const std::string& text);
BackboneConfig load_backbone_config(const std::string& path);
std::string backbone_config_yaml(const BackboneConfig& config);

// Block b of a stage uses shifted windows iff b is odd.
constexpr bool block_is_shifted(int block) noexcept { return block % 2 == 1; }

struct EmbedParams {
    // Rows (offset * m + channel) for the 27 offsets of the 3x3x3 kernel in
    // lexicographic (dx, dy, dz) order, dx slowest; columns C_1.
    Parameter weight;
    Parameter bn_gamma, bn_beta;
    BatchStats running;
    double momentum = 0.9;

    void visit(const ParameterVisitor& fn);
};

struct BlockParams {
    Parameter ln1_gamma, ln1_beta;
    AttentionParams attention;
    Parameter ln2_gamma, ln2_beta;
    Parameter mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    void visit(const ParameterVisitor& fn);
};

struct DownsampleParams {
    Parameter ln_gamma, ln_beta;
    Parameter weight, bias;

    void visit(const ParameterVisitor& fn);
};

struct DecoderParams {
    // up_weight[l] maps stage l + 1 features to stage l width.
    std::vector<Parameter> up_weight, up_bias;
    Parameter head_weight, head_bias;

    void visit(const ParameterVisitor& fn);
};

class Backbone {
public:
    Backbone() = default;
    Backbone(BackboneConfig config, std::uint64_t seed);

    const BackboneConfig& config() const noexcept { return config_; }

    EmbedParams embed;
    std::vector<std::vector<BlockParams>> blocks;
    std::vector<DownsampleParams> downsample;
    DecoderParams decoder;
    bool training = true;

    // Every trainable parameter, in a fixed order.
    void visit(const ParameterVisitor& fn);
    std::size_t parameter_count();

private:
    BackboneConfig config_;
};

// Geometry and constant inputs of one scene, reusable across steps.
struct PreparedScene {
    VoxelHierarchy hierarchy;
    std::vector<Tensor> signals;  // per stage, N_l x m
    // Per stage: regular and shifted partitions.
    std::vector<WindowPartition> regular, shifted;
    // knn[l][i]: stage l voxels pooled into voxel i of stage l + 1.
    std::vector<std::vector<std::vector<std::size_t>>> knn;
    // Finest-level convolution input, N_1 x 27m.
    Tensor embed_columns;
    std::vector<int> labels;  // per finest voxel, empty when unlabeled
};

PreparedScene prepare_scene(const PointCloud& pc, const BackboneConfig& config, std::uint64_t seed);

// Per-voxel input of the embedding: (r - c, non-positional signals).
Tensor embed_inputs(const SparseVoxelLevel& level);
// 27 m columns per voxel: the embedding input of each existing neighbor at
// offsets in {-1, 0, 1}^3, zeros where the neighbor is empty.
Tensor neighbor_columns(const SparseVoxelLevel& level, const Tensor& inputs);

// For each coarse voxel, the (up to) k fine voxels whose centers are
// nearest its center, nearest first, ties to the smaller coordinate.
// `stride` is the voxel-size ratio between the two levels.
std::vector<std::vector<std::size_t>> knn_neighbors(const SparseVoxelLevel& fine, const SparseVoxelLevel& coarse,
                                                    int stride, std::size_t k);

struct ForwardOptions {
    AttentionEngine engine = AttentionEngine::Streaming;
    std::size_t threads = 1;
};

Var initial_embed(Tape& tape, const PreparedScene& scene, Backbone& model);
Var swin_block(Tape& tape, Var x, const Tensor& signals, const WindowPartition& partition, BlockParams& params,
               const ForwardOptions& options);
Var knn_pool_downsample(Tape& tape, Var fine, const std::vector<std::vector<std::size_t>>& groups,
                        DownsampleParams& params);

// Stage outputs, finest first.
std::vector<Var> encode(Tape& tape, const PreparedScene& scene, Backbone& model, const ForwardOptions& options);
// Per-voxel class logits at the finest level.
Var decode_segmentation(Tape& tape, const PreparedScene& scene, const std::vector<Var>& stages,
                        Backbone& model);

// Non-recording convenience: stage feature matrices of a point cloud.
std::vector<Tensor> encode_point_cloud(const PointCloud& pc, Backbone& model, std::uint64_t seed,
                                       const ForwardOptions& options = {});

// --- Checkpoints ---------------------------------------------------------

using NamedTensors = std::map<std::string, Tensor>;

void write_checkpoint(std::ostream& out, const NamedTensors& tensors);
NamedTensors read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

// Parameters plus the embedding's running statistics.
NamedTensors model_state(Backbone& model);
// Throws InputError on missing or mis-shaped entries.
void load_model_state(Backbone& model, const NamedTensors& state);

// --- Toy training --------------------------------------------------------

struct LabeledScene {
    PointCloud cloud;
    std::vector<int> labels;  // per point
};

// Two-class scenes whose first color channel encodes the class: class 1
// points have color[0] in [0.2, 1], class 0 in [-1, -0.2]. Each scene is a
// few planar patches of random class.
std::vector<LabeledScene> make_separable_dataset(std::size_t scenes, std::size_t points_per_scene,
                                                 std::uint64_t seed, std::size_t channels = 6);

PreparedScene prepare_labeled_scene(const LabeledScene& scene, const BackboneConfig& config, std::uint64_t seed);

struct TrainOptions {
    int epochs = 50;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = kDefaultSeed;
    ForwardOptions forward;
};

// Stochastic gradient descent over the scenes in a fixed order.
class Trainer {
public:
    Trainer(Backbone& model, TrainOptions options);

    // Mean loss over the scenes. Throws DivergenceError on a non-finite loss.
    double run_epoch(const std::vector<PreparedScene>& scenes);
    int epoch() const noexcept { return epoch_; }

    // Model state, momentum buffers ("opt.<name>") and "meta.epoch".
    NamedTensors state();
    void restore(const NamedTensors& state);

private:
    Backbone& model_;
    TrainOptions options_;
    std::map<std::string, Tensor> velocity_;
    int epoch_ = 0;
};

// Fraction of finest voxels whose argmax logit equals the label, in eval mode.
double segmentation_accuracy(Backbone& model, const std::vector<PreparedScene>& scenes,
                             const ForwardOptions& options = {});

struct TrainResult {
    std::vector<double> loss_curve;
    double accuracy = 0.0;
};

TrainResult train_toy(Backbone& model, const std::vector<PreparedScene>& scenes, const TrainOptions& options);

}  // namespace swin3d
