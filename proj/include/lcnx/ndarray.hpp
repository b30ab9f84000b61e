// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lcnx/error.hpp"

namespace lcnx {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array. The element type is float for training and
/// double for gradient verification.
template <typename T>
class NdArray {
public:
    using value_type = T;

    NdArray() = default;

    explicit NdArray(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    NdArray(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size()) {
            throw ShapeError("NdArray: shape " + shape_str(shape_) + " does not match " +
                             std::to_string(data_.size()) + " elements");
        }
    }

    NdArray(Shape shape, std::initializer_list<T> data)
        : NdArray(std::move(shape), std::vector<T>(data)) {}

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Multi-index access; bounds are not checked.
    template <typename... I>
    T& operator()(I... idx) noexcept {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }
    template <typename... I>
    const T& operator()(I... idx) const noexcept {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    NdArray reshaped(Shape shape) const {
        if (shape_numel(shape) != numel()) {
            throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
        }
        return NdArray(std::move(shape), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    NdArray<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return NdArray<U>(shape_, std::move(out));
    }

    friend bool operator==(const NdArray& a, const NdArray& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const noexcept {
        std::size_t off = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) {
            off = off * shape_[axis++] + i;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

template <typename T>
T max_abs_diff(const NdArray<T>& a, const NdArray<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    T m{0};
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

/// Bitwise equality of the underlying buffers (distinguishes -0 from +0).
template <typename T>
bool bitwise_equal(const NdArray<T>& a, const NdArray<T>& b) {
    return a.shape() == b.shape() &&
           std::equal(a.data().begin(), a.data().end(), b.data().begin(), [](T x, T y) {
               return std::memcmp(&x, &y, sizeof(T)) == 0;
           });
}

} // namespace lcnx
