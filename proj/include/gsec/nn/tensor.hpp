#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gsec/error.hpp"

namespace gsec::nn {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);

// Dense row-major array of rank <= 4. Rank-4 tensors are N x C x H x W.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        if (shape_.size() > 4) {
            throw ShapeMismatch("tensor rank above 4: " + shape_string(shape_));
        }
        std::size_t n = 1;
        for (const int d : shape_) {
            if (d < 0) {
                throw ShapeMismatch("negative tensor dimension: " + shape_string(shape_));
            }
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, fill);
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Rank-4 accessors.
    int n() const { return shape_.at(0); }
    int c() const { return shape_.at(1); }
    int h() const { return shape_.at(2); }
    int w() const { return shape_.at(3); }
    std::size_t plane() const { return static_cast<std::size_t>(h()) * static_cast<std::size_t>(w()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
    const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

    // Pointer to the H x W plane of (n, c).
    T* channel(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
    const T* channel(int n, int c) const { return data_.data() + offset(n, c, 0, 0); }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] += other.data_[i];
        }
        return *this;
    }

    void require_same_shape(const Tensor& other, const char* what) const {
        if (!same_shape(other)) {
            throw ShapeMismatch(std::string(what) + ": " + shape_string(shape_) + " vs " + shape_string(other.shape_));
        }
    }

    void require_rank(int r, const char* what) const {
        if (rank() != r) {
            throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                                shape_string(shape_));
        }
    }

private:
    std::size_t offset(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * static_cast<std::size_t>(shape_[1]) + static_cast<std::size_t>(c)) *
                    static_cast<std::size_t>(shape_[2]) +
                static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(shape_[3]) +
               static_cast<std::size_t>(x);
    }

    Shape shape_;
    std::vector<T> data_;
};

// A learnable tensor with its gradient accumulator.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}

    void zero_grad() { grad.fill(T(0)); }
};

}  // namespace gsec::nn
