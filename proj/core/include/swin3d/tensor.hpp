// Copyright Contributors to the swin3d-cpp Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "swin3d/memory.hpp"

namespace swin3d {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major tensor of doubles. Most of the library works with rank-2
// (rows x cols) tensors; rank-1 tensors hold per-channel vectors such as
// LayerNorm gains. Storage goes through the tracking allocator.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::span<const double> values);
    Tensor(Shape shape, std::initializer_list<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor filled(Shape shape, double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // Rank-2 accessors. A rank-1 tensor of length n is viewed as 1 x n.
    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols(), cols()};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    void fill(double value);
    void add_inplace(const Tensor& other);
    void scale_inplace(double factor);

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    Buffer data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* context);
void require_rank2(const Tensor& t, const char* context);

// Plain (non-recording) kernels shared by the autodiff ops.
Tensor matmul_plain(const Tensor& a, const Tensor& b);
Tensor matmul_transpose_a(const Tensor& a, const Tensor& b);  // a^T b
Tensor matmul_transpose_b(const Tensor& a, const Tensor& b);  // a b^T

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_difference(std::span<const double> a, std::span<const double> b,
                               double floor = 1e-300);

// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|); zero when both are zero.
double relative_error_inf(std::span<const double> a, std::span<const double> b);

inline double max_relative_difference(const Tensor& a, const Tensor& b, double floor = 1e-300) {
    return max_relative_difference(a.values(), b.values(), floor);
}
inline double relative_error_inf(const Tensor& a, const Tensor& b) {
    return relative_error_inf(a.values(), b.values());
}

}  // namespace swin3d
