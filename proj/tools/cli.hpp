// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "swin3d/attention.hpp"
#include "swin3d/random.hpp"

namespace swin3d::cli {

// Stable exit codes.
enum ExitCode : int { kSuccess = 0, kValidationFailure = 1, kRuntimeFailure = 2 };

// Runs the tool on argv-style arguments (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct SelfcheckOptions {
    std::uint64_t seed = kDefaultSeed;
    std::size_t windows = 100;  // random windows for engine equivalence
    std::size_t grids = 100;    // random grids for partition, hierarchy and kNN checks
    std::size_t threads = 1;
    // Perturbs one analytic table gradient before the gradient comparison.
    bool inject_fault = false;
};

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& options);

}  // namespace swin3d::cli
