#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ad2/errors.hpp"
#include "ad2/rng.hpp"

namespace ad2 {

// Dense row-major tensor. Feature maps and images use [H][W][C] with the
// channel index innermost; conv weights use [kh][kw][cin][cout].
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        std::size_t n = 1;
        for (int d : shape_) {
            if (d < 0) throw InvalidInput("tensor: negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, T(0));
    }

    Tensor(int h, int w, int c) : Tensor(std::vector<int>{h, w, c}) {}

    static Tensor scalar(T v) {
        Tensor t(std::vector<int>{});
        t.data_.assign(1, v);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 3-D accessors for [H][W][C] maps
    int h() const { return shape_.size() == 3 ? shape_[0] : 0; }
    int w() const { return shape_.size() == 3 ? shape_[1] : 0; }
    int c() const { return shape_.size() == 3 ? shape_[2] : 0; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int y, int x, int ch) { return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + ch]; }
    const T& at(int y, int x, int ch) const {
        return data_[(static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2] + ch];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T* row(int y, int x = 0) { return data_.data() + (static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2]; }
    const T* row(int y, int x = 0) const {
        return data_.data() + (static_cast<std::size_t>(y) * shape_[1] + x) * shape_[2];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void fill_uniform(Rng& rng, double lo, double hi) {
        for (auto& v : data_) v = static_cast<T>(rng.uniform(lo, hi));
    }

    void fill_normal(Rng& rng, double mean, double stddev) {
        for (auto& v : data_) v = static_cast<T>(mean + stddev * rng.normal());
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    template <class U>
    bool same_shape_spatial(const Tensor<U>& o) const {
        return rank() == 3 && o.rank() == 3 && h() == o.h() && w() == o.w();
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    template <class U>
    friend class Tensor;

    std::vector<int> shape_;
    std::vector<T> data_;
};

template <class T>
inline bool all_finite(const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    }
    return true;
}

}  // namespace ad2
