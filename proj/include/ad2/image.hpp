#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ad2/geometry.hpp"
#include "ad2/tensor.hpp"

namespace ad2 {

// Images are [H][W][3] float tensors with values in [0,1].
using Image = Tensor<float>;

// Sampling tables for one axis of a half-pixel-center bilinear resize with
// edge clamping. Shared by the plain resize below and the autodiff resize so
// both paths compute identical values.
template <class T>
struct BilinearAxis {
    std::vector<int> i0, i1;
    std::vector<T> frac;
};

template <class T>
BilinearAxis<T> bilinear_axis(int n, int on) {
    BilinearAxis<T> ax;
    ax.i0.resize(on);
    ax.i1.resize(on);
    ax.frac.resize(on);
    for (int i = 0; i < on; ++i) {
        const double s = (i + 0.5) * static_cast<double>(n) / on - 0.5;
        const double f = std::floor(s);
        int a = static_cast<int>(f);
        ax.i0[i] = std::clamp(a, 0, n - 1);
        ax.i1[i] = std::clamp(a + 1, 0, n - 1);
        ax.frac[i] = static_cast<T>(s - f);
    }
    return ax;
}

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& src, int oh, int ow) {
    if (src.rank() != 3) throw InvalidInput("resize_bilinear: rank-3 tensor expected");
    if (oh <= 0 || ow <= 0) throw InvalidInput("resize_bilinear: bad output size");
    const int H = src.h(), W = src.w(), C = src.c();
    if (oh == H && ow == W) return src;
    const auto ay = bilinear_axis<T>(H, oh);
    const auto ax = bilinear_axis<T>(W, ow);
    Tensor<T> out(oh, ow, C);
    for (int y = 0; y < oh; ++y) {
        const T wy1 = ay.frac[y], wy0 = T(1) - wy1;
        for (int x = 0; x < ow; ++x) {
            const T wx1 = ax.frac[x], wx0 = T(1) - wx1;
            const T* p00 = src.row(ay.i0[y], ax.i0[x]);
            const T* p01 = src.row(ay.i0[y], ax.i1[x]);
            const T* p10 = src.row(ay.i1[y], ax.i0[x]);
            const T* p11 = src.row(ay.i1[y], ax.i1[x]);
            T* po = out.row(y, x);
            for (int c = 0; c < C; ++c)
                po[c] = wy0 * (wx0 * p00[c] + wx1 * p01[c]) + wy1 * (wx0 * p10[c] + wx1 * p11[c]);
        }
    }
    return out;
}

template <class T>
std::vector<T> channel_means(const Tensor<T>& img) {
    if (img.rank() != 3) throw InvalidInput("channel_means: rank-3 tensor expected");
    std::vector<double> acc(img.c(), 0.0);
    for (int y = 0; y < img.h(); ++y)
        for (int x = 0; x < img.w(); ++x) {
            const T* px = img.row(y, x);
            for (int c = 0; c < img.c(); ++c) acc[c] += px[c];
        }
    std::vector<T> m(img.c());
    const double n = static_cast<double>(img.h()) * img.w();
    for (int c = 0; c < img.c(); ++c) m[c] = static_cast<T>(acc[c] / n);
    return m;
}

// Samples a square crop (real-valued side, centered on cx,cy in frame pixels)
// resized to out_size in one warp. Taps outside the frame read the frame's
// channel means.
template <class T>
Tensor<T> crop_resize_mean_pad(const Tensor<T>& frame, double cx, double cy, double side, int out_size) {
    if (frame.rank() != 3) throw InvalidInput("crop: rank-3 tensor expected");
    if (!(side > 0) || out_size <= 0) throw InvalidInput("crop: bad size");
    const int H = frame.h(), W = frame.w(), C = frame.c();
    const std::vector<T> mean = channel_means(frame);
    const double x0 = cx - side / 2;
    const double y0 = cy - side / 2;
    const double scale = side / out_size;

    Tensor<T> out(out_size, out_size, C);
    for (int oy = 0; oy < out_size; ++oy) {
        const double sy = y0 + (oy + 0.5) * scale - 0.5;
        const double fy = std::floor(sy);
        const int iy0 = static_cast<int>(fy);
        const T wy1 = static_cast<T>(sy - fy), wy0 = T(1) - wy1;
        for (int ox = 0; ox < out_size; ++ox) {
            const double sx = x0 + (ox + 0.5) * scale - 0.5;
            const double fx = std::floor(sx);
            const int ix0 = static_cast<int>(fx);
            const T wx1 = static_cast<T>(sx - fx), wx0 = T(1) - wx1;
            auto tap = [&](int yy, int xx) -> const T* {
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) return mean.data();
                return frame.row(yy, xx);
            };
            const T* p00 = tap(iy0, ix0);
            const T* p01 = tap(iy0, ix0 + 1);
            const T* p10 = tap(iy0 + 1, ix0);
            const T* p11 = tap(iy0 + 1, ix0 + 1);
            T* po = out.row(oy, ox);
            for (int c = 0; c < C; ++c)
                po[c] = wy0 * (wx0 * p00[c] + wx1 * p01[c]) + wy1 * (wx0 * p10[c] + wx1 * p11[c]);
        }
    }
    return out;
}

template <class T>
void clamp01_inplace(Tensor<T>& img) {
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::min(T(1), std::max(T(0), img[i]));
}

inline void validate_image(const Image& img, const char* who, int min_side = 1) {
    if (img.rank() != 3 || img.c() != 3) throw InvalidInput(std::string(who) + ": expected [H][W][3] image");
    if (img.h() < min_side || img.w() < min_side)
        throw InvalidInput(std::string(who) + ": image smaller than " + std::to_string(min_side) + " px");
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float v = img[i];
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
            throw InvariantError(std::string(who) + ": pixel values must be finite and in [0,1]");
    }
}

}  // namespace ad2
