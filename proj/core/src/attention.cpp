// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/attention.hpp"

#include <algorithm>
#include <memory>

#include <fmt/format.h>

#include "swin3d/errors.hpp"
#include "swin3d/parallel.hpp"

namespace swin3d {

std::string_view to_string(AttentionEngine engine) {
    return engine == AttentionEngine::Vanilla ? "vanilla" : "streaming";
}

AttentionEngine parse_engine(std::string_view name) {
    if (name == "vanilla") return AttentionEngine::Vanilla;
    if (name == "streaming") return AttentionEngine::Streaming;
    throw InputError(fmt::format("unknown attention engine '{}' (expected vanilla or streaming)", name));
}

AttentionParams::AttentionParams(const std::string& prefix, std::size_t channels_, std::size_t heads_,
                                 std::span<const SignalKind> layout, double window_height)
    : channels(channels_), heads(heads_) {
    if (heads == 0 || channels % heads != 0) {
        throw InputError(fmt::format("attention: {} channels not divisible by {} heads", channels, heads));
    }
    q = Parameter(prefix + ".q", Tensor::matrix(channels, channels));
    k = Parameter(prefix + ".k", Tensor::matrix(channels, channels));
    v = Parameter(prefix + ".v", Tensor::matrix(channels, channels));
    tables = CrseTables(prefix, layout, heads, head_dim(), window_height);
}

void AttentionParams::init(Rng& rng, double stddev) {
    fill_truncated_normal(q.value, rng, stddev);
    fill_truncated_normal(k.value, rng, stddev);
    fill_truncated_normal(v.value, rng, stddev);
}

void AttentionParams::visit(const ParameterVisitor& fn) {
    fn(q);
    fn(k);
    fn(v);
    tables.visit(fn);
}

kernels::TableView<double> table_view(const CrseTables& tables) {
    kernels::TableView<double> view;
    view.heads = tables.heads();
    view.head_dim = tables.head_dim();
    for (std::size_t l = 0; l < tables.channels(); ++l) view.quantizers.push_back(tables.quantizer(l));
    for (auto kind : kTableKinds) {
        for (std::size_t l = 0; l < tables.channels(); ++l) {
            view.data[static_cast<std::size_t>(kind)].push_back(tables.table(kind, l).value.data());
        }
    }
    return view;
}

TableGrads make_table_grads(const CrseTables& tables) {
    TableGrads grads;
    for (auto kind : kTableKinds) {
        for (std::size_t l = 0; l < tables.channels(); ++l) {
            grads[static_cast<std::size_t>(kind)].push_back(Tensor::zeros(tables.table(kind, l).value.shape()));
        }
    }
    return grads;
}

namespace {

kernels::TableGradView<double> grad_view(TableGrads& grads) {
    kernels::TableGradView<double> view;
    for (std::size_t k = 0; k < 3; ++k)
        for (auto& t : grads[k]) view.data[k].push_back(t.data());
    return view;
}

void check_window(const WindowBatch& batch, const AttentionParams& params) {
    const Tensor& f = batch.features;
    const Tensor& s = batch.signals;
    require_rank2(f, "attention features");
    require_rank2(s, "attention signals");
    if (f.rows() == 0) throw InputError("attention: empty window");
    if (f.cols() != params.channels) {
        throw DimensionError(
            fmt::format("attention: features have {} channels, layer expects {}", f.cols(), params.channels));
    }
    if (s.rows() != f.rows()) {
        throw DimensionError(fmt::format("attention: {} signal rows for {} feature rows", s.rows(), f.rows()));
    }
    if (s.cols() != params.tables.channels()) {
        throw DimensionError(fmt::format("attention: signals have {} channels, tables expect {}", s.cols(),
                                         params.tables.channels()));
    }
}

}  // namespace

Tensor attention_forward(AttentionEngine engine, const WindowBatch& batch, const AttentionParams& params,
                         AttentionContext* context) {
    check_window(batch, params);
    const std::size_t n = batch.features.rows(), c = params.channels;
    Tensor q = matmul_plain(batch.features, params.q.value);
    Tensor k = matmul_plain(batch.features, params.k.value);
    Tensor v = matmul_plain(batch.features, params.v.value);

    const auto tables = table_view(params.tables);
    kernels::WindowView<double> w{n, c, batch.signals.cols(), q.data(), k.data(), v.data(), batch.signals.data()};
    Tensor out = Tensor::matrix(n, c);
    Buffer coefficients, row_lse;
    if (engine == AttentionEngine::Vanilla) {
        kernels::forward_vanilla(w, tables, out.data(), coefficients);
    } else {
        kernels::forward_streaming(w, tables, out.data(), row_lse);
    }
    if (context != nullptr) {
        context->engine = engine;
        context->q = std::move(q);
        context->k = std::move(k);
        context->v = std::move(v);
        context->output = out;
        context->coefficients = std::move(coefficients);
        context->row_lse = std::move(row_lse);
        context->ready = true;
    }
    return out;
}

AttentionGrads attention_backward(const WindowBatch& batch, const AttentionParams& params,
                                  const AttentionContext& context, const Tensor& upstream) {
    if (!context.ready) throw UsageError("attention_backward: no forward context recorded");
    check_window(batch, params);
    const std::size_t n = batch.features.rows(), c = params.channels;
    if (context.q.rows() != n || context.output.rows() != n) {
        throw UsageError("attention_backward: context was recorded for a different window");
    }
    if (upstream.rank() != 2 || upstream.rows() != n || upstream.cols() != c) {
        throw DimensionError("attention_backward: upstream gradient shape mismatch");
    }

    const auto tables = table_view(params.tables);
    kernels::WindowView<double> w{n,
                                  c,
                                  batch.signals.cols(),
                                  context.q.data(),
                                  context.k.data(),
                                  context.v.data(),
                                  batch.signals.data()};
    AttentionGrads grads;
    Tensor dq = Tensor::matrix(n, c), dk = Tensor::matrix(n, c), dv = Tensor::matrix(n, c);
    grads.tables = make_table_grads(params.tables);
    auto gview = grad_view(grads.tables);
    if (context.engine == AttentionEngine::Vanilla) {
        if (context.coefficients.size() != n * n * params.heads) {
            throw UsageError("attention_backward: vanilla context lacks coefficients");
        }
        kernels::backward_vanilla(w, tables, context.coefficients, upstream.data(), dq.data(), dk.data(),
                                  dv.data(), gview);
    } else {
        if (context.row_lse.size() != n * params.heads) {
            throw UsageError("attention_backward: streaming context lacks row statistics");
        }
        Buffer delta;
        kernels::row_deltas(upstream.data(), context.output.data(), n, params.heads, params.head_dim(), delta);
        kernels::backward_streaming(w, tables, delta, context.row_lse, upstream.data(), dq.data(), dk.data(),
                                    dv.data(), gview);
    }
    grads.q = matmul_transpose_a(batch.features, dq);
    grads.k = matmul_transpose_a(batch.features, dk);
    grads.v = matmul_transpose_a(batch.features, dv);
    grads.features = matmul_transpose_b(dq, params.q.value);
    grads.features.add_inplace(matmul_transpose_b(dk, params.k.value));
    grads.features.add_inplace(matmul_transpose_b(dv, params.v.value));
    return grads;
}

std::vector<Tensor> attention_coefficients(const AttentionContext& context, std::size_t heads) {
    if (!context.ready || context.engine != AttentionEngine::Vanilla) {
        throw UsageError("attention_coefficients: needs a vanilla forward context");
    }
    const std::size_t n = context.q.rows();
    std::vector<Tensor> out;
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor a = Tensor::matrix(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) a(i, j) = context.coefficients[(i * heads + h) * n + j];
        out.push_back(std::move(a));
    }
    return out;
}

Tensor level_signals(const SparseVoxelLevel& level) {
    const std::size_t m = level.signal_channels();
    Tensor s = Tensor::matrix(level.size(), m);
    for (std::size_t i = 0; i < level.size(); ++i) {
        std::copy(level[i].rep_signal.begin(), level[i].rep_signal.end(), s.data() + i * m);
    }
    return s;
}

namespace {

struct WindowState {
    Buffer coefficients;
    Buffer row_lse;
};

// Copies the listed rows of a row-major matrix into a contiguous buffer.
template <class Vec>
void gather_rows_into(const double* src, std::size_t cols, const std::vector<std::size_t>& rows, Vec& dst) {
    dst.resize(rows.size() * cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(src + rows[r] * cols, cols, dst.data() + r * cols);
    }
}

void scatter_add_rows(const double* src, std::size_t cols, const std::vector<std::size_t>& rows, double* dst) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double* s = src + r * cols;
        double* d = dst + rows[r] * cols;
        for (std::size_t c = 0; c < cols; ++c) d[c] += s[c];
    }
}

}  // namespace

Var windowed_attention(Tape& tape, Var x, const Tensor& signals, const WindowPartition& partition,
                       AttentionParams& params, const WindowedAttentionOptions& options) {
    const Tensor& xv = tape.value(x);
    require_rank2(xv, "windowed_attention");
    require_rank2(signals, "windowed_attention signals");
    const std::size_t n = xv.rows(), c = params.channels, m = signals.cols();
    if (xv.cols() != c) {
        throw DimensionError(fmt::format("windowed_attention: {} channels, layer expects {}", xv.cols(), c));
    }
    if (signals.rows() != n || m != params.tables.channels()) {
        throw DimensionError("windowed_attention: signal matrix does not match the level");
    }
    if (partition.voxel_count != n) {
        throw DimensionError(fmt::format("windowed_attention: partition covers {} voxels, level has {}",
                                         partition.voxel_count, n));
    }

    Var qv = matmul(tape, x, tape.param(params.q));
    Var kv = matmul(tape, x, tape.param(params.k));
    Var vv = matmul(tape, x, tape.param(params.v));
    std::array<std::vector<Var>, 3> table_vars;
    for (auto kind : kTableKinds)
        for (std::size_t l = 0; l < m; ++l)
            table_vars[static_cast<std::size_t>(kind)].push_back(tape.param(params.tables.table(kind, l)));

    auto tables = std::make_shared<kernels::TableView<double>>(table_view(params.tables));
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t l = 0; l < m; ++l) tables->data[k][l] = tape.value(table_vars[k][l]).data();

    auto windows = std::make_shared<std::vector<std::vector<std::size_t>>>();
    windows->reserve(partition.windows.size());
    for (const auto& win : partition.windows) windows->push_back(win.members);
    auto states = std::make_shared<std::vector<WindowState>>(windows->size());
    auto sig = std::make_shared<Tensor>(signals);
    const AttentionEngine engine = options.engine;

    Tensor out = Tensor::matrix(n, c);
    {
        const double* q = tape.value(qv).data();
        const double* k = tape.value(kv).data();
        const double* v = tape.value(vv).data();
        double* o = out.data();
        parallel_for(windows->size(), options.threads, [&](std::size_t begin, std::size_t end, std::size_t) {
            TagScope tag(MemoryTag::Workspace);
            Buffer lq, lk, lv, ls, lo;
            for (std::size_t wi = begin; wi < end; ++wi) {
                const auto& rows = (*windows)[wi];
                gather_rows_into(q, c, rows, lq);
                gather_rows_into(k, c, rows, lk);
                gather_rows_into(v, c, rows, lv);
                gather_rows_into(sig->data(), m, rows, ls);
                lo.assign(rows.size() * c, 0.0);
                kernels::WindowView<double> w{rows.size(), c, m, lq.data(), lk.data(), lv.data(), ls.data()};
                WindowState& st = (*states)[wi];
                if (engine == AttentionEngine::Vanilla) {
                    kernels::forward_vanilla(w, *tables, lo.data(), st.coefficients);
                } else {
                    kernels::forward_streaming(w, *tables, lo.data(), st.row_lse);
                }
                for (std::size_t r = 0; r < rows.size(); ++r) std::copy_n(lo.data() + r * c, c, o + rows[r] * c);
            }
        });
    }

    const std::size_t threads = options.threads;
    return tape.record(std::move(out), [qv, kv, vv, table_vars, tables, windows, states, sig, engine, threads, c,
                                        m](Tape& t, Var self) {
        const double* q = t.value(qv).data();
        const double* k = t.value(kv).data();
        const double* v = t.value(vv).data();
        const double* o = t.value(self).data();
        const double* g = t.grad(self).data();
        double* dq = t.grad(qv).data();
        double* dk = t.grad(kv).data();
        double* dv = t.grad(vv).data();
        const std::size_t heads = tables->heads, d = tables->head_dim;

        const std::size_t workers = worker_count(windows->size(), threads);
        std::vector<TableGrads> worker_grads;
        for (std::size_t wk = 0; wk < workers; ++wk) {
            TableGrads tg;
            for (std::size_t kind = 0; kind < 3; ++kind)
                for (std::size_t l = 0; l < m; ++l)
                    tg[kind].push_back(Tensor::zeros(t.value(table_vars[kind][l]).shape()));
            worker_grads.push_back(std::move(tg));
        }

        parallel_for(windows->size(), threads, [&](std::size_t begin, std::size_t end, std::size_t worker) {
            TagScope tag(MemoryTag::Workspace);
            auto gview = grad_view(worker_grads[worker]);
            Buffer lq, lk, lv, ls, lg, ldq, ldk, ldv, delta;
            for (std::size_t wi = begin; wi < end; ++wi) {
                const auto& rows = (*windows)[wi];
                gather_rows_into(q, c, rows, lq);
                gather_rows_into(k, c, rows, lk);
                gather_rows_into(v, c, rows, lv);
                gather_rows_into(sig->data(), m, rows, ls);
                gather_rows_into(g, c, rows, lg);
                ldq.assign(rows.size() * c, 0.0);
                ldk.assign(rows.size() * c, 0.0);
                ldv.assign(rows.size() * c, 0.0);
                kernels::WindowView<double> w{rows.size(), c, m, lq.data(), lk.data(), lv.data(), ls.data()};
                const WindowState& st = (*states)[wi];
                if (engine == AttentionEngine::Vanilla) {
                    kernels::backward_vanilla(w, *tables, st.coefficients, lg.data(), ldq.data(), ldk.data(),
                                              ldv.data(), gview);
                } else {
                    delta.resize(rows.size() * heads);
                    for (std::size_t r = 0; r < rows.size(); ++r)
                        for (std::size_t h = 0; h < heads; ++h)
                            delta[r * heads + h] = kernels::detail::dot(lg.data() + r * c + h * d, o + rows[r] * c + h * d, d);
                    kernels::backward_streaming(w, *tables, delta, st.row_lse, lg.data(), ldq.data(), ldk.data(),
                                                ldv.data(), gview);
                }
                // Each voxel belongs to exactly one window, so these rows are disjoint across workers.
                scatter_add_rows(ldq.data(), c, rows, dq);
                scatter_add_rows(ldk.data(), c, rows, dk);
                scatter_add_rows(ldv.data(), c, rows, dv);
            }
        });

        for (std::size_t wk = 0; wk < workers; ++wk)
            for (std::size_t kind = 0; kind < 3; ++kind)
                for (std::size_t l = 0; l < m; ++l) t.grad(table_vars[kind][l]).add_inplace(worker_grads[wk][kind][l]);
    });
}

Tensor run_windows(const Tensor& features, const Tensor& signals, const WindowPartition& partition,
                   AttentionParams& params, const WindowedAttentionOptions& options) {
    Tape tape;
    Var x = tape.input(features);
    return tape.value(windowed_attention(tape, x, signals, partition, params, options));
}

}  // namespace swin3d
