// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over dense tensors. A Tape records
// forward results together with a closure that pushes the node's gradient
// to its inputs. Parameters live outside the tape; binding one with
// Tape::param() creates a leaf whose gradient is added to Parameter::grad
// at the end of every backward call.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <deque>
#include <vector>

#include "swin3d/tensor.hpp"

namespace swin3d {

struct Parameter {
    Parameter() = default;
    Parameter(std::string name_, Tensor value_)
        : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros(value.shape())) {}

    std::string name;
    Tensor value;
    Tensor grad;

    void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

// Visitor over a module's parameters, in a fixed order.
using ParameterVisitor = std::function<void(Parameter&)>;

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const noexcept { return id != static_cast<std::size_t>(-1); }
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, Var self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    // Non-parameter leaf (input data). Its gradient is available after
    // backward through grad().
    Var input(Tensor value);
    Var param(Parameter& p);
    Var record(Tensor value, BackwardFn backward);

    const Tensor& value(Var v) const;
    // Gradient buffer of a node, allocated as zeros on first access.
    Tensor& grad(Var v);
    bool has_grad(Var v) const;

    std::size_t size() const noexcept { return nodes_.size(); }

    // Seeds d(out) = seed and walks nodes in exact reverse recording order.
    // Node gradients are reset at the start of each call; parameter
    // gradients accumulate across calls. The optional observer sees every
    // node index in visiting order.
    void backward(Var out, const Tensor& seed,
                  const std::function<void(std::size_t)>& observer = {});
    // Scalar output shorthand: seed of ones.
    void backward(Var out);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_allocated = false;
        BackwardFn backward;
        Parameter* parameter = nullptr;
    };

    Node& node(Var v);
    const Node& node(Var v) const;

    std::deque<Node> nodes_;
};

// --- Recorded operations -------------------------------------------------

Var matmul(Tape& tape, Var a, Var b);
Var add(Tape& tape, Var a, Var b);
// x: N x C, bias: length C (rank-1 or 1 x C).
Var add_bias(Tape& tape, Var x, Var bias);
Var linear(Tape& tape, Var x, Var weight, Var bias);
Var relu(Tape& tape, Var x);
// Tanh-approximated GELU.
Var gelu(Tape& tape, Var x);

inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Tape& tape, Var x, Var gamma, Var beta, double eps = kLayerNormEps);

// x w1 + b1 -> gelu -> w2 + b2
Var mlp_block(Tape& tape, Var x, Var w1, Var b1, Var w2, Var b2);

// Mean negative log-likelihood over rows; returns a 1-element tensor.
Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels);

// sum(x * weights) with weights constant; returns a 1-element tensor.
Var weighted_sum(Tape& tape, Var x, const Tensor& weights);

// out[i] = x[index[i]]; backward scatter-adds.
Var gather_rows(Tape& tape, Var x, std::span<const std::size_t> index);

// Column-wise batch normalization over rows. Training mode uses the batch
// mean and biased variance and reports them through `stats` (mean, var) when
// non-null; eval mode normalizes with the given running statistics.
struct BatchStats {
    Tensor mean;
    Tensor var;
};
inline constexpr double kBatchNormEps = 1e-5;
Var batch_norm_train(Tape& tape, Var x, Var gamma, Var beta, BatchStats* stats = nullptr,
                     double eps = kBatchNormEps);
Var batch_norm_eval(Tape& tape, Var x, Var gamma, Var beta, const BatchStats& running,
                    double eps = kBatchNormEps);

// out[g][c] = max over rows r in groups[g] of x[r][c]; gradient flows to the
// first row attaining the maximum.
Var group_max(Tape& tape, Var x, std::vector<std::vector<std::size_t>> groups);

// --- Helpers --------------------------------------------------------------

double gelu_value(double x);
double gelu_derivative(double x);

// Plain forward of the per-row LayerNorm (no recording).
Tensor layer_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          double eps = kLayerNormEps);

}  // namespace swin3d
