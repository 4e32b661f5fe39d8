#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ad2/geometry.hpp"
#include "ad2/graph.hpp"
#include "ad2/image.hpp"
#include "ad2/params.hpp"
#include "ad2/rng.hpp"

namespace ad2 {

struct ScoreMap {
    Tensor<float> grid;  // [H][W][2], channel 0 background, channel 1 target

    ScoreMap() = default;
    explicit ScoreMap(Tensor<float> g) : grid(std::move(g)) {
        if (grid.rank() != 3 || grid.c() != 2) throw InvalidInput("ScoreMap: expected [H][W][2]");
    }
};

struct RegressionMap {
    Tensor<float> grid;  // [H][W][4], channels (x, y, w, h)

    RegressionMap() = default;
    explicit RegressionMap(Tensor<float> g) : grid(std::move(g)) {
        if (grid.rank() != 3 || grid.c() != 4) throw InvalidInput("RegressionMap: expected [H][W][4]");
    }
};

struct TrackerOutput {
    ScoreMap score;
    RegressionMap regression;
    BBox predicted_box;
};

// Maps response-grid cell index to search-patch pixel: px = origin + stride*cell.
struct GridMap {
    double origin = 0;
    double stride = 1;
};

struct VictimConfig {
    int search_size = 128;
    int template_size = 64;
    double context_search = 2.0;
    double context_template = 1.0;

    void validate() const {
        if (search_size < 16 || template_size < 16) throw ConfigError("tracker sizes must be >= 16");
        if (template_size >= search_size) throw ConfigError("tracker.template_size must be < tracker.search_size");
        if (!(context_search > 0) || !(context_template > 0)) throw ConfigError("context factors must be positive");
    }
};

struct ConvSpec {
    int k, s, p, cin, cout;
};

// Shared strided backbone; total stride 8.
inline const std::vector<ConvSpec>& backbone_spec() {
    static const std::vector<ConvSpec> layers = {
        {3, 2, 1, 3, 16}, {3, 2, 1, 16, 32}, {3, 2, 1, 32, 48}, {3, 1, 1, 48, 64}, {3, 1, 0, 64, 64},
    };
    return layers;
}

inline int embed_dim(int in) {
    for (const auto& l : backbone_spec()) {
        in = (in + 2 * l.p - l.k) / l.s + 1;
        if (in <= 0) throw InvalidInput("embed_dim: patch too small for backbone");
    }
    return in;
}

// Derives (origin, stride) of the response grid in patch pixels by walking
// the backbone receptive-field recurrence back from the correlation output.
inline GridMap response_grid_map(int template_size) {
    const int t = embed_dim(template_size);
    GridMap m;
    m.origin = (t - 1) / 2.0;
    m.stride = 1;
    const auto& layers = backbone_spec();
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
        m.origin = m.origin * it->s + (it->k - 1) / 2.0 - it->p;
        m.stride *= it->s;
    }
    return m;
}

// ---- cropping ----

inline std::pair<Image, SearchGeometry> crop_search_patch(const Image& frame, const BBox& prev_box, int out_size,
                                                          double context_factor) {
    validate_image(frame, "crop_search_patch");
    require_valid(prev_box, "crop_search_patch");
    if (prev_box.x1() <= 0 || prev_box.x0() >= frame.w() || prev_box.y1() <= 0 || prev_box.y0() >= frame.h())
        throw InvalidInput("crop_search_patch: box does not intersect the frame");
    // Context beyond the frame is all mean padding, so cap the crop there and
    // keep the geometry's area fraction within its (0, 1] domain.
    const double side =
        std::min(context_side(prev_box, context_factor), static_cast<double>(std::min(frame.h(), frame.w())));
    SearchGeometry geom{out_size, side, side, frame.h(), frame.w()};
    geom.validate();
    Image patch = crop_resize_mean_pad(frame, prev_box.cx, prev_box.cy, side, out_size);
    clamp01_inplace(patch);
    return {std::move(patch), geom};
}

// ---- box decoding ----

// Argmax of target probability picks the cell; regression offsets are in
// response-cell units, sizes are log-scale factors on the previous box.
// Tie-break: nearest to the grid center, then smallest row-major index.
inline BBox decode_box(const ScoreMap& score, const RegressionMap& reg, const SearchGeometry& geom,
                       const BBox& prev_box, const GridMap& grid) {
    const auto& s = score.grid;
    if (!s.same_shape_spatial(reg.grid)) throw InvalidInput("decode_box: map shapes disagree");
    const int H = s.h(), W = s.w();
    const double ci = (H - 1) / 2.0, cj = (W - 1) / 2.0;
    int bi = 0, bj = 0;
    double best = -1e300, best_d2 = 1e300;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double margin = static_cast<double>(s.at(i, j, 1)) - s.at(i, j, 0);  // monotone in P_t
            const double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
            if (margin > best || (margin == best && d2 < best_d2)) {
                best = margin;
                best_d2 = d2;
                bi = i;
                bj = j;
            }
        }
    const double scale = (geom.patch_w > 0 ? geom.patch_w : geom.patch_h) / geom.search_size;
    const double px = grid.origin + grid.stride * (bj + reg.grid.at(bi, bj, 0));
    const double py = grid.origin + grid.stride * (bi + reg.grid.at(bi, bj, 1));
    const double x0 = prev_box.cx - geom.patch_w / 2;
    const double y0 = prev_box.cy - geom.patch_h / 2;
    auto bounded_exp = [](double v) { return std::exp(std::clamp(v, -20.0, 20.0)); };
    BBox out;
    out.cx = x0 + (px + 0.5) * scale - 0.5;
    out.cy = y0 + (py + 0.5) * scale - 0.5;
    out.w = prev_box.w * bounded_exp(reg.grid.at(bi, bj, 2));
    out.h = prev_box.h * bounded_exp(reg.grid.at(bi, bj, 3));
    return out;
}

// ---- adapter contract ----

using TemplateFeat = Tensor<float>;

struct HeadMaps {
    ScoreMap score;
    RegressionMap regression;
};

class TrackerAdapter {
public:
    virtual ~TrackerAdapter() = default;
    virtual int search_size() const = 0;
    virtual double search_context() const = 0;
    virtual GridMap grid_map() const = 0;
    virtual TemplateFeat init_template(const Image& frame, const BBox& init_box) const = 0;
    virtual HeadMaps forward(const TemplateFeat& tmpl, const Image& search_patch) const = 0;

    TrackerOutput track_step(const TemplateFeat& tmpl, const Image& search_patch, const SearchGeometry& geom,
                             const BBox& prev_box) const {
        HeadMaps maps = forward(tmpl, search_patch);
        TrackerOutput out;
        out.predicted_box = decode_box(maps.score, maps.regression, geom, prev_box, grid_map());
        out.score = std::move(maps.score);
        out.regression = std::move(maps.regression);
        return out;
    }
};

// Registers an adapter under a name, probing the head-map channel contract
// on a synthetic frame first. Misbehaving adapters are rejected here.
void register_tracker(const std::string& name, std::shared_ptr<TrackerAdapter> adapter);
std::shared_ptr<TrackerAdapter> get_tracker(const std::string& name);
std::vector<std::string> registered_trackers();
void clear_tracker_registry();

// ---- toy victim ----

class ToyTracker : public TrackerAdapter {
public:
    VictimConfig vcfg;
    ParamStore params;

    static ToyTracker init(const VictimConfig& cfg, Rng& rng) {
        cfg.validate();
        ToyTracker t;
        t.vcfg = cfg;
        auto conv = [&](const std::string& name, int kh, int kw, int cin, int cout) {
            Tensor<float> w({kh, kw, cin, cout});
            init_conv(w, rng);
            t.params.add(name + ".w", std::move(w));
            t.params.add(name + ".b", Tensor<float>({cout}));
        };
        int i = 0;
        for (const auto& l : backbone_spec()) conv("bb" + std::to_string(i++), l.k, l.k, l.cin, l.cout);
        conv("cls0", 3, 3, 64, 32);
        conv("cls1", 1, 1, 32, 2);
        conv("reg0", 3, 3, 64, 32);
        conv("reg1", 1, 1, 32, 4);
        return t;
    }

    template <class T>
    Var embed_g(Graph<T>& g, Var patch, const BoundParams<T>& p) const {
        Var x = patch;
        for (std::size_t i = 0; i < backbone_spec().size(); ++i) {
            const auto& l = backbone_spec()[i];
            const std::string n = "bb" + std::to_string(i);
            x = g.relu(g.conv2d(x, p[n + ".w"], p[n + ".b"], l.s, l.p));
        }
        return x;
    }

    // Correlation plus both heads; returns (score logits, regression) vars.
    template <class T>
    std::pair<Var, Var> heads_g(Graph<T>& g, Var tmpl_feat, Var search_feat, const BoundParams<T>& p) const {
        Var corr = g.xcorr_depthwise(search_feat, tmpl_feat);
        Var c = g.relu(g.conv2d(corr, p["cls0.w"], p["cls0.b"], 1, 1));
        Var score = g.conv2d(c, p["cls1.w"], p["cls1.b"], 1, 0);
        Var r = g.relu(g.conv2d(corr, p["reg0.w"], p["reg0.b"], 1, 1));
        Var reg = g.conv2d(r, p["reg1.w"], p["reg1.b"], 1, 0);
        return {score, reg};
    }

    int search_size() const override { return vcfg.search_size; }
    double search_context() const override { return vcfg.context_search; }
    GridMap grid_map() const override { return response_grid_map(vcfg.template_size); }

    TemplateFeat init_template(const Image& frame, const BBox& init_box) const override {
        auto [patch, geom] = crop_search_patch(frame, init_box, vcfg.template_size, vcfg.context_template);
        (void)geom;
        Graph<float> g;
        BoundParams<float> p(g, params, false);
        return g.val(embed_g(g, g.constant(patch), p));
    }

    HeadMaps forward(const TemplateFeat& tmpl, const Image& search_patch) const override {
        Graph<float> g;
        BoundParams<float> p(g, params, false);
        Var feat = embed_g(g, g.constant(search_patch), p);
        auto [score, reg] = heads_g(g, g.constant(tmpl), feat, p);
        return {ScoreMap(g.val(score)), RegressionMap(g.val(reg))};
    }
};

}  // namespace ad2
