// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "swin3d/errors.hpp"

namespace swin3d {

// --- Tape ------------------------------------------------------------------

Var Tape::input(Tensor value) { return record(std::move(value), {}); }

Var Tape::param(Parameter& p) {
    Var v = record(p.value, {});
    nodes_.back().parameter = &p;
    return v;
}

Var Tape::record(Tensor value, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || v.id >= nodes_.size()) throw UsageError("tape: invalid variable");
    return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw UsageError("tape: invalid variable");
    return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor& Tape::grad(Var v) {
    Node& n = node(v);
    if (!n.grad_allocated) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_allocated = true;
    }
    return n.grad;
}

bool Tape::has_grad(Var v) const { return node(v).grad_allocated; }

void Tape::backward(Var out, const Tensor& seed, const std::function<void(std::size_t)>& observer) {
    Node& root = node(out);
    require_same_shape(root.value, seed, "backward seed");
    for (auto& n : nodes_) {
        n.grad = Tensor();
        n.grad_allocated = false;
    }
    grad(out) = seed;
    for (std::size_t i = out.id + 1; i-- > 0;) {
        if (observer) observer(i);
        Node& n = nodes_[i];
        if (!n.grad_allocated) continue;
        if (n.backward) n.backward(*this, Var{i});
    }
    for (auto& n : nodes_) {
        if (n.parameter != nullptr && n.grad_allocated) n.parameter->grad.add_inplace(n.grad);
    }
}

void Tape::backward(Var out) { backward(out, Tensor::filled(value(out).shape(), 1.0)); }

// --- Operations --------------------------------------------------------------

Var matmul(Tape& tape, Var a, Var b) {
    Tensor c = matmul_plain(tape.value(a), tape.value(b));
    return tape.record(std::move(c), [a, b](Tape& t, Var self) {
        const Tensor& dc = t.grad(self);
        t.grad(a).add_inplace(matmul_transpose_b(dc, t.value(b)));
        t.grad(b).add_inplace(matmul_transpose_a(t.value(a), dc));
    });
}

Var add(Tape& tape, Var a, Var b) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape(av, bv, "add");
    Tensor c = av;
    c.add_inplace(bv);
    return tape.record(std::move(c), [a, b](Tape& t, Var self) {
        const Tensor& dc = t.grad(self);
        t.grad(a).add_inplace(dc);
        t.grad(b).add_inplace(dc);
    });
}

Var add_bias(Tape& tape, Var x, Var bias) {
    const Tensor& xv = tape.value(x);
    const Tensor& bv = tape.value(bias);
    require_rank2(xv, "add_bias");
    if (bv.size() != xv.cols()) {
        throw DimensionError(fmt::format("add_bias: bias of shape {} for input {}",
                                         shape_string(bv.shape()), shape_string(xv.shape())));
    }
    Tensor y = xv;
    const std::size_t n = y.rows(), c = y.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) y(i, j) += bv[j];
    return tape.record(std::move(y), [x, bias](Tape& t, Var self) {
        const Tensor& dy = t.grad(self);
        t.grad(x).add_inplace(dy);
        Tensor& db = t.grad(bias);
        for (std::size_t i = 0; i < dy.rows(); ++i)
            for (std::size_t j = 0; j < dy.cols(); ++j) db[j] += dy(i, j);
    });
}

Var linear(Tape& tape, Var x, Var weight, Var bias) {
    return add_bias(tape, matmul(tape, x, weight), bias);
}

Var relu(Tape& tape, Var x) {
    Tensor y = tape.value(x);
    for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
    return tape.record(std::move(y), [x](Tape& t, Var self) {
        const Tensor& dy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            if (xv[i] > 0.0) dx[i] += dy[i];
        }
    });
}

namespace {
constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu_value(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
    const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
    const double th = std::tanh(u);
    const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

Var gelu(Tape& tape, Var x) {
    Tensor y = tape.value(x);
    for (auto& v : y.values()) v = gelu_value(v);
    return tape.record(std::move(y), [x](Tape& t, Var self) {
        const Tensor& dy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * gelu_derivative(xv[i]);
    });
}

namespace {

void check_layer_norm_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    require_rank2(x, "layer_norm");
    if (x.cols() == 0) throw DimensionError("layer_norm: zero channels");
    if (gamma.size() != x.cols() || beta.size() != x.cols()) {
        throw DimensionError(fmt::format("layer_norm: affine parameters {} / {} for input {}",
                                         shape_string(gamma.shape()), shape_string(beta.shape()),
                                         shape_string(x.shape())));
    }
}

// Writes normalized rows into xhat and per-row inverse std into inv_std.
void normalize_rows(const Tensor& x, double eps, Tensor& xhat, std::vector<double>& inv_std) {
    const std::size_t n = x.rows(), c = x.cols();
    xhat = Tensor::matrix(n, c);
    inv_std.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += x(i, j);
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[i] = inv;
        for (std::size_t j = 0; j < c; ++j) xhat(i, j) = (x(i, j) - mean) * inv;
    }
}

}  // namespace

Tensor layer_norm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_layer_norm_shapes(x, gamma, beta);
    Tensor xhat;
    std::vector<double> inv_std;
    normalize_rows(x, eps, xhat, inv_std);
    for (std::size_t i = 0; i < xhat.rows(); ++i)
        for (std::size_t j = 0; j < xhat.cols(); ++j) xhat(i, j) = gamma[j] * xhat(i, j) + beta[j];
    return xhat;
}

Var layer_norm(Tape& tape, Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = tape.value(x);
    const Tensor& gv = tape.value(gamma);
    const Tensor& bv = tape.value(beta);
    check_layer_norm_shapes(xv, gv, bv);
    Tensor xhat;
    std::vector<double> inv_std;
    normalize_rows(xv, eps, xhat, inv_std);
    Tensor y = xhat;
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) = gv[j] * y(i, j) + bv[j];

    return tape.record(std::move(y), [x, gamma, beta, xhat = std::move(xhat),
                                      inv_std = std::move(inv_std)](Tape& t, Var self) {
        const Tensor& dy = t.grad(self);
        const Tensor& g = t.value(gamma);
        Tensor& dgamma = t.grad(gamma);
        Tensor& dbeta = t.grad(beta);
        Tensor& dx = t.grad(x);
        const std::size_t n = dy.rows(), c = dy.cols();
        const double inv_c = 1.0 / static_cast<double>(c);
        for (std::size_t i = 0; i < n; ++i) {
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                dgamma[j] += dy(i, j) * xhat(i, j);
                dbeta[j] += dy(i, j);
                const double dxh = dy(i, j) * g[j];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xhat(i, j);
            }
            for (std::size_t j = 0; j < c; ++j) {
                const double dxh = dy(i, j) * g[j];
                dx(i, j) += inv_std[i] * (dxh - inv_c * sum_dxhat - xhat(i, j) * inv_c * sum_dxhat_xhat);
            }
        }
    });
}

Var mlp_block(Tape& tape, Var x, Var w1, Var b1, Var w2, Var b2) {
    const Tensor& xv = tape.value(x);
    const Tensor& w1v = tape.value(w1);
    const Tensor& w2v = tape.value(w2);
    require_rank2(xv, "mlp_block");
    require_rank2(w1v, "mlp_block w1");
    require_rank2(w2v, "mlp_block w2");
    if (w1v.rows() != xv.cols() || w2v.rows() != w1v.cols() || w2v.cols() != xv.cols()) {
        throw DimensionError(fmt::format("mlp_block: weights {} / {} for input {}",
                                         shape_string(w1v.shape()), shape_string(w2v.shape()),
                                         shape_string(xv.shape())));
    }
    Var hidden = gelu(tape, linear(tape, x, w1, b1));
    return linear(tape, hidden, w2, b2);
}

Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
    const Tensor& z = tape.value(logits);
    require_rank2(z, "softmax_cross_entropy");
    const std::size_t n = z.rows(), c = z.cols();
    if (labels.size() != n) {
        throw DimensionError(
            fmt::format("softmax_cross_entropy: {} labels for {} rows", labels.size(), n));
    }
    if (n == 0) throw InputError("softmax_cross_entropy: no rows");
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw InputError(fmt::format("softmax_cross_entropy: label {} at row {} outside [0, {})",
                                         labels[i], i, c));
        }
    }
    Tensor probs = Tensor::matrix(n, c);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = z(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs(i, j) = std::exp(z(i, j) - mx);
            sum += probs(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) probs(i, j) /= sum;
        const auto y = static_cast<std::size_t>(labels[i]);
        loss += -(z(i, y) - mx - std::log(sum));
    }
    loss /= static_cast<double>(n);
    std::vector<int> label_copy(labels.begin(), labels.end());
    return tape.record(Tensor({1}, {loss}), [logits, probs = std::move(probs),
                                             label_copy = std::move(label_copy)](Tape& t, Var self) {
        const double g = t.grad(self)[0];
        Tensor& dz = t.grad(logits);
        const std::size_t rows = probs.rows(), cols = probs.cols();
        const double scale = g / static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                const double onehot = static_cast<std::size_t>(label_copy[i]) == j ? 1.0 : 0.0;
                dz(i, j) += scale * (probs(i, j) - onehot);
            }
        }
    });
}

Var weighted_sum(Tape& tape, Var x, const Tensor& weights) {
    const Tensor& xv = tape.value(x);
    require_same_shape(xv, weights, "weighted_sum");
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
    return tape.record(Tensor({1}, {s}), [x, weights](Tape& t, Var self) {
        const double g = t.grad(self)[0];
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * weights[i];
    });
}

Var batch_norm_train(Tape& tape, Var x, Var gamma, Var beta, BatchStats* stats, double eps) {
    const Tensor& xv = tape.value(x);
    check_layer_norm_shapes(xv, tape.value(gamma), tape.value(beta));
    const std::size_t n = xv.rows(), c = xv.cols();
    if (n == 0) throw InputError("batch_norm: empty batch");
    Tensor mean = Tensor::zeros({c}), var = Tensor::zeros({c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) mean[j] += xv(i, j);
    mean.scale_inplace(1.0 / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) var[j] += (xv(i, j) - mean[j]) * (xv(i, j) - mean[j]);
    var.scale_inplace(1.0 / static_cast<double>(n));

    std::vector<double> inv_std(c);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    Tensor xhat = Tensor::matrix(n, c);
    Tensor y = Tensor::matrix(n, c);
    const Tensor& gv = tape.value(gamma);
    const Tensor& bv = tape.value(beta);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            xhat(i, j) = (xv(i, j) - mean[j]) * inv_std[j];
            y(i, j) = gv[j] * xhat(i, j) + bv[j];
        }
    if (stats != nullptr) {
        stats->mean = mean;
        stats->var = var;
    }
    return tape.record(std::move(y), [x, gamma, beta, xhat = std::move(xhat),
                                      inv_std = std::move(inv_std)](Tape& t, Var self) {
        const Tensor& dy = t.grad(self);
        const Tensor& g = t.value(gamma);
        Tensor& dgamma = t.grad(gamma);
        Tensor& dbeta = t.grad(beta);
        Tensor& dx = t.grad(x);
        const std::size_t rows = dy.rows(), cols = dy.cols();
        const double inv_n = 1.0 / static_cast<double>(rows);
        for (std::size_t j = 0; j < cols; ++j) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < rows; ++i) {
                sum_dy += dy(i, j);
                sum_dy_xhat += dy(i, j) * xhat(i, j);
            }
            dgamma[j] += sum_dy_xhat;
            dbeta[j] += sum_dy;
            for (std::size_t i = 0; i < rows; ++i) {
                dx(i, j) += g[j] * inv_std[j] * (dy(i, j) - inv_n * sum_dy - xhat(i, j) * inv_n * sum_dy_xhat);
            }
        }
    });
}

Var batch_norm_eval(Tape& tape, Var x, Var gamma, Var beta, const BatchStats& running, double eps) {
    const Tensor& xv = tape.value(x);
    check_layer_norm_shapes(xv, tape.value(gamma), tape.value(beta));
    const std::size_t n = xv.rows(), c = xv.cols();
    if (running.mean.size() != c || running.var.size() != c) {
        throw DimensionError("batch_norm: running statistics do not match the channel count");
    }
    std::vector<double> inv_std(c);
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(running.var[j] + eps);
    Tensor xhat = Tensor::matrix(n, c);
    Tensor y = Tensor::matrix(n, c);
    const Tensor& gv = tape.value(gamma);
    const Tensor& bv = tape.value(beta);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            xhat(i, j) = (xv(i, j) - running.mean[j]) * inv_std[j];
            y(i, j) = gv[j] * xhat(i, j) + bv[j];
        }
    return tape.record(std::move(y), [x, gamma, beta, xhat = std::move(xhat),
                                      inv_std = std::move(inv_std)](Tape& t, Var self) {
        const Tensor& dy = t.grad(self);
        const Tensor& g = t.value(gamma);
        Tensor& dgamma = t.grad(gamma);
        Tensor& dbeta = t.grad(beta);
        Tensor& dx = t.grad(x);
        for (std::size_t i = 0; i < dy.rows(); ++i)
            for (std::size_t j = 0; j < dy.cols(); ++j) {
                dgamma[j] += dy(i, j) * xhat(i, j);
                dbeta[j] += dy(i, j);
                dx(i, j) += dy(i, j) * g[j] * inv_std[j];
            }
    });
}

Var group_max(Tape& tape, Var x, std::vector<std::vector<std::size_t>> groups) {
    const Tensor& xv = tape.value(x);
    require_rank2(xv, "group_max");
    const std::size_t c = xv.cols();
    Tensor y = Tensor::matrix(groups.size(), c);
    std::vector<std::size_t> argmax(groups.size() * c);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) throw InputError(fmt::format("group_max: group {} is empty", g));
        for (std::size_t j = 0; j < c; ++j) {
            std::size_t best = groups[g][0];
            for (std::size_t r : groups[g]) {
                if (r >= xv.rows()) throw InputError(fmt::format("group_max: row {} out of range", r));
                if (xv(r, j) > xv(best, j)) best = r;
            }
            argmax[g * c + j] = best;
            y(g, j) = xv(best, j);
        }
    }
    return tape.record(std::move(y), [x, argmax = std::move(argmax)](Tape& t, Var self) {
        const Tensor& dy = t.grad(self);
        Tensor& dx = t.grad(x);
        const std::size_t cols = dy.cols();
        for (std::size_t g = 0; g < dy.rows(); ++g)
            for (std::size_t j = 0; j < cols; ++j) dx(argmax[g * cols + j], j) += dy(g, j);
    });
}

Var gather_rows(Tape& tape, Var x, std::span<const std::size_t> index) {
    const Tensor& xv = tape.value(x);
    require_rank2(xv, "gather_rows");
    const std::size_t c = xv.cols();
    Tensor y = Tensor::matrix(index.size(), c);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= xv.rows()) {
            throw InputError(fmt::format("gather_rows: index {} out of range {}", index[i], xv.rows()));
        }
        std::copy_n(xv.data() + index[i] * c, c, y.data() + i * c);
    }
    std::vector<std::size_t> idx(index.begin(), index.end());
    return tape.record(std::move(y), [x, idx = std::move(idx)](Tape& t, Var self) {
        const Tensor& dy = t.grad(self);
        Tensor& dx = t.grad(x);
        const std::size_t cols = dy.cols();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < cols; ++j) dx(idx[i], j) += dy(i, j);
    });
}

}  // namespace swin3d
