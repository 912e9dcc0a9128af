// tensor.hpp - dense row-major tensor, the value carrier for every module.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"

namespace dpaat {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                             " elements, shape " + shape_str(shape_) + " needs " +
                             std::to_string(shape_numel(shape_)));
    }

    static Tensor scalar(Real v) { return Tensor({1}, std::vector<Real>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<Real> data() { return data_; }
    std::span<const Real> data() const { return data_; }
    std::vector<Real>& vec() { return data_; }
    const std::vector<Real>& vec() const { return data_; }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    // Row-major 2-D access.
    Real& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
    Real at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const {
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    // Slice along the leading axis: rows [begin, end).
    Tensor rows(std::size_t begin, std::size_t end) const {
        Shape s = shape_;
        s[0] = end - begin;
        const std::size_t stride = numel() / shape_[0];
        return Tensor(std::move(s), std::vector<Real>(data_.begin() + begin * stride,
                                                      data_.begin() + end * stride));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void validate_shape() const {
        if (shape_.empty()) throw ShapeError("tensor shape must have rank >= 1");
        for (auto d : shape_)
            if (d == 0) throw ShapeError("tensor shape " + shape_str(shape_) + " has a zero dimension");
    }

    Shape shape_;
    std::vector<Real> data_;
};

struct NamedTensor {
    std::string name;
    Tensor value;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Ordered name -> tensor list. Order is significant (serialization, optimizer state).
using NamedTensors = std::vector<NamedTensor>;

inline const Tensor* find_tensor(const NamedTensors& set, const std::string& name) {
    for (const auto& e : set)
        if (e.name == name) return &e.value;
    return nullptr;
}

inline Tensor* find_tensor(NamedTensors& set, const std::string& name) {
    for (auto& e : set)
        if (e.name == name) return &e.value;
    return nullptr;
}

// Gather rows (leading-axis entries) by index.
inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
    Shape s = t.shape();
    s[0] = idx.size();
    const std::size_t stride = t.numel() / t.dim(0);
    std::vector<Real> out;
    out.reserve(idx.size() * stride);
    for (auto i : idx) {
        auto src = t.data().subspan(i * stride, stride);
        out.insert(out.end(), src.begin(), src.end());
    }
    return Tensor(std::move(s), std::move(out));
}

} // namespace dpaat
