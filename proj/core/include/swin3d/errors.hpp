// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace swin3d {

// Shape mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Caller supplied data that violates an operation's precondition
// (empty cloud, empty window, label out of range, ...).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. backward without a matching forward context.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Malformed file content. line() is 1-based, or 0 for binary formats.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace swin3d
