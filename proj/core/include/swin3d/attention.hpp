// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Multi-head window self-attention with contextual relative signal
// encoding, in two interchangeable engines (see attention_kernels.hpp).

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "swin3d/attention_kernels.hpp"
#include "swin3d/autodiff.hpp"
#include "swin3d/crse.hpp"
#include "swin3d/random.hpp"
#include "swin3d/voxel_grid.hpp"

namespace swin3d {

enum class AttentionEngine { Vanilla, Streaming };

std::string_view to_string(AttentionEngine engine);
AttentionEngine parse_engine(std::string_view name);

// Q, K, V projections (C x C, split into heads of width C / heads) and the
// cRSE tables for one attention layer.
struct AttentionParams {
    AttentionParams() = default;
    AttentionParams(const std::string& prefix, std::size_t channels, std::size_t heads,
                    std::span<const SignalKind> layout, double window_height);

    std::size_t channels = 0;
    std::size_t heads = 0;
    std::size_t head_dim() const noexcept { return heads ? channels / heads : 0; }

    Parameter q, k, v;
    CrseTables tables;

    // Truncated normal projections; tables stay as they are.
    void init(Rng& rng, double stddev = 0.02);
    void visit(const ParameterVisitor& fn);
};

// One window: feature rows f (N x C) and representative signals s (N x m),
// positions in absolute meters.
struct WindowBatch {
    Tensor features;
    Tensor signals;
};

// Forward state retained for backward.
struct AttentionContext {
    AttentionEngine engine = AttentionEngine::Streaming;
    bool ready = false;
    Tensor q, k, v;      // projections, N x C
    Tensor output;       // N x C
    Buffer coefficients; // vanilla only: N * N * heads
    Buffer row_lse;      // streaming only: N * heads
};

Tensor attention_forward(AttentionEngine engine, const WindowBatch& batch, const AttentionParams& params,
                         AttentionContext* context = nullptr);

inline Tensor attention_vanilla(const WindowBatch& batch, const AttentionParams& params,
                                AttentionContext* context = nullptr) {
    return attention_forward(AttentionEngine::Vanilla, batch, params, context);
}
inline Tensor attention_streaming(const WindowBatch& batch, const AttentionParams& params,
                                  AttentionContext* context = nullptr) {
    return attention_forward(AttentionEngine::Streaming, batch, params, context);
}

// Same shapes as the corresponding tables: tables[kind][channel].
using TableGrads = std::array<std::vector<Tensor>, 3>;
TableGrads make_table_grads(const CrseTables& tables);

struct AttentionGrads {
    Tensor features;
    Tensor q, k, v;
    TableGrads tables;
};

// Analytic gradients for one window, using the engine recorded in the
// context. Throws UsageError if the context holds no forward pass.
AttentionGrads attention_backward(const WindowBatch& batch, const AttentionParams& params,
                                  const AttentionContext& context, const Tensor& upstream);

// Softmax coefficients of a vanilla context, as [head][i][j].
std::vector<Tensor> attention_coefficients(const AttentionContext& context, std::size_t heads);

struct WindowedAttentionOptions {
    AttentionEngine engine = AttentionEngine::Streaming;
    std::size_t threads = 1;
};

// Recorded attention over every window of a partition. x holds the level's
// (normalized) features in voxel order and signals the level's
// representative signals. Windows are processed independently and their
// outputs scattered back to voxel order.
Var windowed_attention(Tape& tape, Var x, const Tensor& signals, const WindowPartition& partition,
                       AttentionParams& params, const WindowedAttentionOptions& options);

// Non-recording variant.
Tensor run_windows(const Tensor& features, const Tensor& signals, const WindowPartition& partition,
                   AttentionParams& params, const WindowedAttentionOptions& options);

// N x m matrix of a level's representative signals.
Tensor level_signals(const SparseVoxelLevel& level);

kernels::TableView<double> table_view(const CrseTables& tables);

}  // namespace swin3d
