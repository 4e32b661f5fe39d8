#pragma once

#include <cmath>
#include <string>

#include "ad2/geometry.hpp"
#include "ad2/graph.hpp"
#include "ad2/image.hpp"
#include "ad2/params.hpp"
#include "ad2/rng.hpp"

namespace ad2 {

inline constexpr int kMaxPyramidLevels = 5;

struct PyramidConfig {
    int levels = kMaxPyramidLevels;  // level blocks the network carries
    int convs_per_block = 4;
    int feature_channels = 32;
    int group_count = 4;
    int att_kernel = 7;  // spatial-attention convolution kernel

    void validate() const {
        if (levels < 1 || levels > kMaxPyramidLevels) throw ConfigError("pyramid.levels must be in [1,5]");
        if (convs_per_block < 1) throw ConfigError("pyramid.convs_per_block must be >= 1");
        if (feature_channels < 1 || group_count < 1 || feature_channels % group_count)
            throw ConfigError("pyramid.feature_channels must be divisible by pyramid.group_count");
        if (att_kernel < 1 || att_kernel % 2 == 0) throw ConfigError("pyramid.att_kernel must be odd");
    }
};

// ---- adaptive pyramid depth ----

// floor(sqrt(H_s * Q)), Q = patch area / frame area, before clamping.
// The float sqrt is corrected so the result is the exact integer floor
// whenever the geometry values are exactly representable.
inline int raw_pyramid_levels(const SearchGeometry& geom) {
    geom.validate();
    const double q = geom.area_fraction();
    const double target = geom.search_size * geom.patch_h * geom.patch_w;  // H_s*h_s*w_s
    const double frame_area = static_cast<double>(geom.frame_h) * geom.frame_w;
    int n = static_cast<int>(std::floor(std::sqrt(geom.search_size * q)));
    if (n < 0) n = 0;
    while (static_cast<double>(n + 1) * (n + 1) * frame_area <= target) ++n;
    while (n > 0 && static_cast<double>(n) * n * frame_area > target) --n;
    return n;
}

inline int adaptive_pyramid_levels(const SearchGeometry& geom) {
    const int raw = raw_pyramid_levels(geom);
    return std::max(1, std::min(kMaxPyramidLevels, raw));
}

// ---- alignment ----

struct RestoreRecipe {
    int orig_h = 0;
    int orig_w = 0;
    bool identity() const { return orig_h == 0; }
};

inline int align_up(int v, int mult) { return ((v + mult - 1) / mult) * mult; }

inline std::pair<Image, RestoreRecipe> align_for_pyramid(const Image& img, int levels) {
    validate_image(img, "align_for_pyramid");
    const int mult = 1 << levels;
    const int ah = align_up(img.h(), mult);
    const int aw = align_up(img.w(), mult);
    if (ah == img.h() && aw == img.w()) return {img, RestoreRecipe{}};
    return {resize_bilinear(img, ah, aw), RestoreRecipe{img.h(), img.w()}};
}

inline Image restore(const RestoreRecipe& recipe, const Image& img) {
    if (recipe.identity()) return img;
    return resize_bilinear(img, recipe.orig_h, recipe.orig_w);
}

// ---- DiD ----

inline Image did_downsample(const Image& img, int levels) {
    validate_image(img, "did_downsample");
    if (levels < 0) throw InvalidInput("did_downsample: negative level count");
    const int f = 1 << levels;
    if (img.h() % f || img.w() % f) throw InvalidInput("did_downsample: dimensions not divisible by 2^levels");
    Image out(img.h() / f, img.w() / f, img.c());
    for (int y = 0; y < out.h(); ++y)
        for (int x = 0; x < out.w(); ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y * f, x * f, c);
    return out;
}

// ---- SrU network ----

struct SruNetwork {
    PyramidConfig cfg;
    ParamStore params;

    static SruNetwork init(const PyramidConfig& cfg, Rng& rng) {
        cfg.validate();
        SruNetwork net;
        net.cfg = cfg;
        const int C = cfg.feature_channels;
        const int K = cfg.att_kernel;
        auto conv = [&](const std::string& name, int kh, int kw, int cin, int cout, bool zero) {
            Tensor<float> w({kh, kw, cin, cout});
            if (!zero) init_conv(w, rng);
            net.params.add(name + ".w", std::move(w));
            net.params.add(name + ".b", Tensor<float>({cout}));
        };
        conv("entry", 3, 3, 3, C, false);
        for (int lv = 0; lv < cfg.levels; ++lv) {
            const std::string p = "lv" + std::to_string(lv) + ".";
            conv(p + "rse.group", 3, 3, C / cfg.group_count, C, false);
            conv(p + "rse.att", K, K, 2, 1, false);
            conv(p + "rse.proj", 1, 1, C, C, false);
            for (int i = 0; i < cfg.convs_per_block; ++i) conv(p + "conv" + std::to_string(i), 3, 3, C, C, false);
            conv(p + "up", 4, 4, C, C, false);
            conv(p + "proj", 3, 3, C, 3, true);  // zero: untrained net is the down-up baseline
        }
        return net;
    }
};

// ---- graph builders ----

// Residual spatial enhancement: group conv, CBAM-style spatial attention
// gate, 1x1 projection, ReLU, plus the identity shortcut.
template <class T>
Var rse_block(Graph<T>& g, Var x, const BoundParams<T>& p, const PyramidConfig& cfg, int level) {
    if (g.val(x).c() != cfg.feature_channels) throw InvalidInput("rse_block: channel mismatch");
    const std::string pre = "lv" + std::to_string(level) + ".rse.";
    Var gc = g.conv2d(x, p[pre + "group.w"], p[pre + "group.b"], 1, 1, cfg.group_count);
    Var pooled = g.concat_c(g.channel_max(gc), g.channel_mean(gc));
    Var gate = g.sigmoid(g.conv2d(pooled, p[pre + "att.w"], p[pre + "att.b"], 1, cfg.att_kernel / 2));
    Var enhanced = g.broadcast_mul(gc, gate);
    Var proj = g.conv2d(enhanced, p[pre + "proj.w"], p[pre + "proj.b"], 1, 0);
    return g.add(g.relu(proj), x);
}

// Pyramid super-resolution: per level the feature branch emits a residual
// image at 2x resolution while the image branch is bilinearly upsampled 2x
// and the two are summed; features cascade into the next level.
template <class T>
Var sru_forward_g(Graph<T>& g, Var lr, const BoundParams<T>& p, const PyramidConfig& cfg, int levels,
                  bool use_rse = true) {
    if (levels < 1 || levels > cfg.levels) throw InvalidInput("sru_forward: level count out of range");
    Var img = lr;
    Var feat = g.relu(g.conv2d(lr, p["entry.w"], p["entry.b"], 1, 1));
    for (int lv = 0; lv < levels; ++lv) {
        const std::string pre = "lv" + std::to_string(lv) + ".";
        if (use_rse) feat = rse_block(g, feat, p, cfg, lv);
        for (int i = 0; i < cfg.convs_per_block; ++i) {
            const std::string c = pre + "conv" + std::to_string(i);
            feat = g.relu(g.conv2d(feat, p[c + ".w"], p[c + ".b"], 1, 1));
        }
        feat = g.relu(g.tconv2d(feat, p[pre + "up.w"], p[pre + "up.b"], 2, 1));
        Var residual = g.conv2d(feat, p[pre + "proj.w"], p[pre + "proj.b"], 1, 1);
        img = g.add(g.bilinear_resize(img, g.val(img).h() * 2, g.val(img).w() * 2), residual);
        if (!g.val(img).same_shape(g.val(residual)))
            throw InvariantError("sru_forward: branch resolutions diverged");
    }
    return g.clamp01(img);
}

// Full pipeline: adaptive depth, alignment, decimation, super-resolution
// carrying the adversarial residuals, restore to the clean resolution.
template <class T>
Var attack_patch_g(Graph<T>& g, Var clean, const SearchGeometry& geom, const BoundParams<T>& p,
                   const PyramidConfig& cfg, bool use_rse = true) {
    // copied out: pushing nodes below reallocates the tape
    const int ch = g.val(clean).h(), cw = g.val(clean).w();
    if (g.val(clean).rank() != 3 || g.val(clean).c() != 3)
        throw InvalidInput("attack_patch: expected [H][W][3] patch");
    if (ch < 8 || cw < 8) throw InvalidInput("attack_patch: patch smaller than 8 px");
    const int levels = std::min(adaptive_pyramid_levels(geom), cfg.levels);
    const int mult = 1 << levels;
    const int ah = align_up(ch, mult);
    const int aw = align_up(cw, mult);
    Var aligned = g.bilinear_resize(clean, ah, aw);
    Var lr = g.decimate(aligned, mult);
    Var up = sru_forward_g(g, lr, p, cfg, levels, use_rse);
    if (g.val(up).h() != ah || g.val(up).w() != aw)
        throw InvariantError("attack_patch: upsampled resolution exceeds aligned size");
    return g.bilinear_resize(up, ch, cw);
}

// ---- plain-tensor wrappers (inference paths and tests) ----

inline Tensor<float> rse_forward(const Tensor<float>& features, const SruNetwork& net, int level = 0) {
    Graph<float> g;
    BoundParams<float> p(g, net.params, false);
    return g.val(rse_block(g, g.constant(features), p, net.cfg, level));
}

inline Image sru_forward(const Image& lr, const SruNetwork& net, int levels, bool use_rse = true) {
    Graph<float> g;
    BoundParams<float> p(g, net.params, false);
    return g.val(sru_forward_g(g, g.constant(lr), p, net.cfg, levels, use_rse));
}

inline Image attack_patch(const Image& clean, const SearchGeometry& geom, const SruNetwork& net,
                          bool use_rse = true) {
    Graph<float> g;
    BoundParams<float> p(g, net.params, false);
    return g.val(attack_patch_g(g, g.constant(clean), geom, p, net.cfg, use_rse));
}

}  // namespace ad2
