// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/random.hpp"

#include <cmath>

namespace swin3d {

double uniform(Rng& rng, double lo, double hi) {
    // 53 random mantissa bits, independent of the standard library's
    // distribution implementations.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
    for (auto& v : t.values()) v = uniform(rng, lo, hi);
}

void fill_truncated_normal(Tensor& t, Rng& rng, double stddev) {
    for (auto& v : t.values()) {
        double z;
        do {
            // Box-Muller, one value per draw.
            double u1 = uniform(rng, 0.0, 1.0);
            while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
            const double u2 = uniform(rng, 0.0, 1.0);
            z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
        } while (std::abs(z) > 2.0);
        v = z * stddev;
    }
}

}  // namespace swin3d
