#pragma once

#include <cmath>
#include <utility>

#include "ad2/graph.hpp"
#include "ad2/image.hpp"
#include "ad2/victim.hpp"

namespace ad2 {

// Errata toggles: the published background-mask threshold ("< -epsilon") and
// the background sign of the score loss contradict the surrounding prose.
// The corrected reading is the default; the literal one stays selectable.
enum class Errata { IntentCorrected, PaperLiteral };

struct AttackConfig {
    double epsilon = 0.5;
    double phi = 1.0;
    double alpha = 1.0;
    double beta = 10.0;
    double gamma = 700.0;
    double tau_b = -5.0;
    double tau_c = 10.0;
    Errata background_sign = Errata::IntentCorrected;
    Errata mask_rule = Errata::IntentCorrected;

    void validate() const {
        if (!(epsilon > 0.0) || !(epsilon < 1.0)) throw ConfigError("attack.epsilon must be in (0,1)");
        if (phi < 0 || alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("attack weights must be >= 0");
    }
};

struct RegionMasks {
    Tensor<std::uint8_t> target_mask;      // HxW
    Tensor<std::uint8_t> background_mask;  // HxW
    int n_target = 0;
    int n_background = 0;
};

// Per-cell softmax over the two class channels: (background, target) probs.
inline std::pair<Tensor<float>, Tensor<float>> class_probs(const ScoreMap& score) {
    const auto& s = score.grid;
    if (!all_finite(s)) throw InvalidInput("class_probs: non-finite logits");
    Tensor<float> pb(s.h(), s.w(), 1), pt(s.h(), s.w(), 1);
    for (int y = 0; y < s.h(); ++y)
        for (int x = 0; x < s.w(); ++x) {
            const double lb = s.at(y, x, 0), lt = s.at(y, x, 1);
            const double m = std::max(lb, lt);
            const double eb = std::exp(lb - m), et = std::exp(lt - m);
            pb.at(y, x, 0) = static_cast<float>(eb / (eb + et));
            pt.at(y, x, 0) = static_cast<float>(et / (eb + et));
        }
    return {std::move(pb), std::move(pt)};
}

// Masks are a pure function of the clean score map. Strict thresholds: the
// corrected rule takes target cells at P_t > eps and background cells at
// P_b > eps; the literal rule's background condition P_b < -eps never holds.
inline RegionMasks region_masks(const ScoreMap& clean_score, const AttackConfig& cfg) {
    cfg.validate();
    auto [pb, pt] = class_probs(clean_score);
    const int H = pb.h(), W = pb.w();
    RegionMasks m;
    m.target_mask = Tensor<std::uint8_t>({H, W});
    m.background_mask = Tensor<std::uint8_t>({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            if (pt.at(y, x, 0) > cfg.epsilon) {
                m.target_mask[i] = 1;
                ++m.n_target;
            }
            const bool bg = cfg.mask_rule == Errata::IntentCorrected ? pb.at(y, x, 0) > cfg.epsilon
                                                                     : pb.at(y, x, 0) < -cfg.epsilon;
            if (bg && !m.target_mask[i]) {
                m.background_mask[i] = 1;
                ++m.n_background;
            }
        }
    return m;
}

// ---- graph builders (clean-side quantities enter as constants) ----

// (phi/N) * [ sum_t (P_t^a - P_t^c) -/+ sum_b (P_b^a - P_b^c) ], N = n_t + n_b
// The clean sums run through the same graph ops as the adversarial ones so the
// loss is exactly zero when both maps carry identical bits.
template <class T>
Var score_reversal_g(Graph<T>& g, Var adv_score, const ScoreMap& clean_score, const RegionMasks& masks,
                     const AttackConfig& cfg) {
    const int n = masks.n_target + masks.n_background;
    if (n == 0) return g.constant(Tensor<T>::scalar(T(0)));
    Var probs_c = g.softmax_c(g.constant(clean_score.grid.template cast<T>()));
    Var probs_a = g.softmax_c(adv_score);
    Var dt = g.sub(g.masked_sum(g.select_channel(probs_a, 1), masks.target_mask),
                   g.masked_sum(g.select_channel(probs_c, 1), masks.target_mask));
    Var db = g.sub(g.masked_sum(g.select_channel(probs_a, 0), masks.background_mask),
                   g.masked_sum(g.select_channel(probs_c, 0), masks.background_mask));
    const T bg_sign = cfg.background_sign == Errata::IntentCorrected ? T(-1) : T(1);
    Var combined = g.add(dt, g.affine(db, bg_sign, T(0)));
    return g.affine(combined, static_cast<T>(cfg.phi / n), T(0));
}

// (beta/N) * sum_t max(R(w)+R(h), tau_b) - (alpha/N) * sum_t min(R(x)^2+R(y)^2, tau_c)
template <class T>
Var box_drift_g(Graph<T>& g, Var adv_reg, const RegionMasks& masks, const AttackConfig& cfg) {
    if (masks.n_target == 0) return g.constant(Tensor<T>::scalar(T(0)));
    Var rx = g.select_channel(adv_reg, 0);
    Var ry = g.select_channel(adv_reg, 1);
    Var size_sum = g.add(g.select_channel(adv_reg, 2), g.select_channel(adv_reg, 3));
    Var shrink = g.masked_sum(g.clamp_min(size_sum, static_cast<T>(cfg.tau_b)), masks.target_mask);
    Var off2 = g.add(g.mul(rx, rx), g.mul(ry, ry));
    Var drift = g.masked_sum(g.clamp_max(off2, static_cast<T>(cfg.tau_c)), masks.target_mask);
    const T inv_n = T(1) / static_cast<T>(masks.n_target);
    return g.sub(g.affine(shrink, static_cast<T>(cfg.beta) * inv_n, T(0)),
                 g.affine(drift, static_cast<T>(cfg.alpha) * inv_n, T(0)));
}

// (gamma/N) * ||adv - clean||_2, N = pixel count * channels
template <class T>
Var perceptibility_g(Graph<T>& g, Var adv_patch, Var clean_patch, const AttackConfig& cfg) {
    if (!g.val(clean_patch).same_shape(g.val(adv_patch))) throw InvalidInput("perceptibility: shape mismatch");
    const std::size_t n = g.val(adv_patch).size();
    Var d = g.sub(adv_patch, clean_patch);
    Var norm = g.sqrt_elem(g.sum(g.mul(d, d)));
    return g.affine(norm, static_cast<T>(cfg.gamma / static_cast<double>(n)), T(0));
}

template <class T>
struct LossVars {
    Var score = -1, drift = -1, l2 = -1, total = -1;
};

template <class T>
LossVars<T> total_loss_g(Graph<T>& g, Var adv_score, Var adv_reg, Var adv_patch, Var clean_patch,
                         const ScoreMap& clean_score, const RegionMasks& masks, const AttackConfig& cfg) {
    LossVars<T> lv;
    lv.score = score_reversal_g(g, adv_score, clean_score, masks, cfg);
    lv.drift = box_drift_g(g, adv_reg, masks, cfg);
    lv.l2 = perceptibility_g(g, adv_patch, clean_patch, cfg);
    lv.total = g.add(g.add(lv.score, lv.drift), lv.l2);
    return lv;
}

// ---- plain wrappers ----

inline double score_reversal_loss(const ScoreMap& clean_score, const ScoreMap& adv_score, const RegionMasks& masks,
                                  const AttackConfig& cfg) {
    Graph<double> g;
    return g.val(score_reversal_g(g, g.constant(adv_score.grid.cast<double>()), clean_score, masks, cfg))[0];
}

inline double box_drift_loss(const RegressionMap& adv_reg, const RegionMasks& masks, const AttackConfig& cfg) {
    Graph<double> g;
    return g.val(box_drift_g(g, g.constant(adv_reg.grid.cast<double>()), masks, cfg))[0];
}

inline double perceptibility_loss(const Image& clean, const Image& adv, const AttackConfig& cfg) {
    Graph<double> g;
    return g.val(
        perceptibility_g(g, g.constant(adv.cast<double>()), g.constant(clean.cast<double>()), cfg))[0];
}

struct LossBreakdown {
    double score = 0, drift = 0, l2 = 0, total = 0;
};

inline LossBreakdown total_loss(const Image& clean_patch, const Image& adv_patch, const TrackerOutput& clean_out,
                                const TrackerOutput& adv_out, const AttackConfig& cfg) {
    const RegionMasks masks = region_masks(clean_out.score, cfg);
    LossBreakdown b;
    b.score = score_reversal_loss(clean_out.score, adv_out.score, masks, cfg);
    b.drift = box_drift_loss(adv_out.regression, masks, cfg);
    b.l2 = perceptibility_loss(clean_patch, adv_patch, cfg);
    b.total = b.score + b.drift + b.l2;
    return b;
}

// Gradient-saliency map: magnitude of d(sum of target logits)/d(patch),
// folded over channels and normalized to [0,1].
inline Tensor<float> heatmap(const ToyTracker& tracker, const TemplateFeat& tmpl, const Image& patch) {
    Graph<float> g;
    BoundParams<float> p(g, tracker.params, false);
    Var in = g.leaf(patch, true);
    Var feat = tracker.embed_g(g, in, p);
    auto [score, reg] = tracker.heads_g(g, g.constant(tmpl), feat, p);
    (void)reg;
    Var target_sum = g.sum(g.select_channel(score, 1));
    g.backward(target_sum);
    const Tensor<float>& gr = g.grad(in);
    Tensor<float> out(patch.h(), patch.w(), 1);
    float peak = 0.0f;
    for (int y = 0; y < patch.h(); ++y)
        for (int x = 0; x < patch.w(); ++x) {
            const float* px = gr.row(y, x);
            float s = 0;
            for (int c = 0; c < 3; ++c) s += px[c] * px[c];
            const float m = std::sqrt(s);
            out.at(y, x, 0) = m;
            peak = std::max(peak, m);
        }
    if (peak > 0)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] /= peak;
    return out;
}

}  // namespace ad2
