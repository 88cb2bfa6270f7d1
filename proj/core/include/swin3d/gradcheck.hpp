// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle. Independent of the analytic backward
// passes: it only ever evaluates forward losses.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "swin3d/autodiff.hpp"

namespace swin3d {

// Builds a scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

inline double evaluate_loss(const LossBuilder& build) {
    Tape tape;
    return tape.value(build(tape))[0];
}

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "param[index]: analytic vs numeric"
};

struct GradCheckOptions {
    double step = 1e-5;
    // Denominator floor for entries whose gradient is ~0.
    double floor = 1e-6;
    // Fraction of entries to check (1 = all); sampled with `seed`.
    double fraction = 1.0;
    std::uint64_t seed = 1;
    // Runs after the analytic pass, before any comparison.
    std::function<void()> after_backward;
};

inline GradCheckReport gradcheck(std::span<Parameter* const> params, const LossBuilder& build,
                                 const GradCheckOptions& options = {}) {
    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        Var loss = build(tape);
        tape.backward(loss);
    }
    if (options.after_backward) options.after_backward();
    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    GradCheckReport report;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            if (options.fraction < 1.0 && coin(rng) >= options.fraction) continue;
            const double saved = p->value[i];
            p->value[i] = saved + options.step;
            const double up = evaluate_loss(build);
            p->value[i] = saved - options.step;
            const double down = evaluate_loss(build);
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double analytic = p->grad[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
            const double rel = std::abs(analytic - numeric) / denom;
            ++report.checked;
            if (rel > report.max_rel_error || report.worst.empty()) {
                report.max_rel_error = rel;
                report.worst = p->name + "[" + std::to_string(i) + "]: " + std::to_string(analytic) +
                               " vs " + std::to_string(numeric);
            }
        }
    }
    return report;
}

}  // namespace swin3d
