// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adfg/error.hpp"
#include "adfg/rng.hpp"

namespace adfg::numerics {

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
    return DType::f32;
}
template <>
constexpr DType dtype_of<double>() {
    return DType::f64;
}

std::string_view to_string(DType dtype);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array. Every extent is positive; scalars have shape {1}.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(validated(std::move(shape))), data_(shape_numel(shape_), T{0}) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(validated(std::move(shape))), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                 shape_string(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    static Tensor randn(Shape shape, Rng& rng, double stddev) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) {
            v = static_cast<T>(rng.normal(0.0, stddev));
        }
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) {
            v = static_cast<T>(lo + (hi - lo) * rng.uniform());
        }
        return t;
    }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t numel() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
    [[nodiscard]] static constexpr DType dtype() noexcept { return dtype_of<T>(); }

    // Extent of the last axis and the number of rows before it.
    [[nodiscard]] std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
    [[nodiscard]] std::size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    [[nodiscard]] std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
    [[nodiscard]] std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * cols(), cols());
    }

    [[nodiscard]] bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool value) noexcept { requires_grad_ = value; }

    [[nodiscard]] bool all_finite() const {
        for (const T v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    [[nodiscard]] Tensor reshaped(Shape shape) const {
        Tensor t(std::move(shape), data_);
        t.requires_grad_ = requires_grad_;
        return t;
    }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        Tensor<U> t(shape_, std::move(out));
        t.set_requires_grad(requires_grad_);
        return t;
    }

    // Bitwise equality of shape and values.
    [[nodiscard]] bool identical(const Tensor& other) const {
        return shape_ == other.shape_ &&
               std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0;
    }

private:
    static Shape validated(Shape shape) {
        if (shape.empty()) {
            throw DimensionError("tensor shape must have at least one extent");
        }
        for (const auto e : shape) {
            if (e == 0) {
                throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
            }
        }
        return shape;
    }

    Shape shape_;
    std::vector<T> data_;
    bool requires_grad_ = false;
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_abs_diff: shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    }
    return worst;
}

}  // namespace adfg::numerics
