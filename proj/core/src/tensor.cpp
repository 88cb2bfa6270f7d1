// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#include "swin3d/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "swin3d/errors.hpp"

namespace swin3d {

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::span<const double> values) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != values.size()) {
        throw DimensionError(fmt::format("tensor of shape {} cannot hold {} values",
                                         shape_string(shape_), values.size()));
    }
    data_.assign(values.begin(), values.end());
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), std::span<const double>(values.begin(), values.size())) {}

Tensor Tensor::filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

std::size_t Tensor::rows() const noexcept {
    if (shape_.size() == 2) return shape_[0];
    return shape_.empty() ? 0 : 1;
}

std::size_t Tensor::cols() const noexcept {
    if (shape_.size() == 2) return shape_[1];
    return shape_.empty() ? 0 : shape_numel(shape_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_inplace(const Tensor& other) {
    require_same_shape(*this, other, "add_inplace");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_inplace(double factor) {
    for (auto& v : data_) v *= factor;
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
    if (a.shape() != b.shape()) {
        throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", context,
                                         shape_string(a.shape()), shape_string(b.shape())));
    }
}

void require_rank2(const Tensor& t, const char* context) {
    if (t.rank() != 2) {
        throw DimensionError(
            fmt::format("{}: expected a matrix, got shape {}", context, shape_string(t.shape())));
    }
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError(fmt::format("matmul: inner dimensions disagree ({} vs {})",
                                         shape_string(a.shape()), shape_string(b.shape())));
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor c = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            const double* brow = b.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_transpose_a(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_transpose_a");
    require_rank2(b, "matmul_transpose_a");
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_transpose_a: row counts disagree");
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor c = Tensor::matrix(k, m);
    for (std::size_t r = 0; r < n; ++r) {
        const double* brow = b.data() + r * m;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = a(r, i);
            if (av == 0.0) continue;
            double* crow = c.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_transpose_b(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_transpose_b");
    require_rank2(b, "matmul_transpose_b");
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_transpose_b: column counts disagree");
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    Tensor c = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.data() + i * k;
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c(i, j) = acc;
        }
    }
    return c;
}

double max_relative_difference(std::span<const double> a, std::span<const double> b, double floor) {
    if (a.size() != b.size()) throw DimensionError("max_relative_difference: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

double relative_error_inf(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("relative_error_inf: length mismatch");
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    if (scale == 0.0) return diff;
    return diff / scale;
}

}  // namespace swin3d
