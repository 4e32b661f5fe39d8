#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "ad2/losses.hpp"
#include "ad2/rng.hpp"
#include "ad2/victim.hpp"

using namespace ad2;

namespace {

ScoreMap make_score(int h, int w, const std::function<std::pair<float, float>(int, int)>& f) {
    Tensor<float> g(h, w, 2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto [lb, lt] = f(y, x);
            g.at(y, x, 0) = lb;
            g.at(y, x, 1) = lt;
        }
    return ScoreMap(std::move(g));
}

ScoreMap random_score(Rng& rng, int h, int w, double lo = -2.0, double hi = 2.0) {
    Tensor<float> g(h, w, 2);
    g.fill_uniform(rng, lo, hi);
    return ScoreMap(std::move(g));
}

RegressionMap random_reg(Rng& rng, int h, int w, double lo, double hi) {
    Tensor<float> g(h, w, 4);
    g.fill_uniform(rng, lo, hi);
    return RegressionMap(std::move(g));
}

// 3x3 map with a confident target in the center and confident background
// elsewhere: P_t = 0.9 at (1,1), P_t = 0.1 everywhere else.
ScoreMap spike_map() {
    const float l9 = static_cast<float>(std::log(9.0));
    return make_score(3, 3, [&](int y, int x) {
        return (y == 1 && x == 1) ? std::pair{0.0f, l9} : std::pair{l9, 0.0f};
    });
}

// Direct-formula reference implementations, independent of the tape.

std::pair<double, double> ref_probs(double lb, double lt) {
    const double m = std::max(lb, lt);
    const double eb = std::exp(lb - m), et = std::exp(lt - m);
    return {eb / (eb + et), et / (eb + et)};
}

double ref_score_reversal(const ScoreMap& clean, const ScoreMap& adv, const RegionMasks& m,
                          const AttackConfig& cfg) {
    const int n = m.n_target + m.n_background;
    if (n == 0) return 0.0;
    double dt = 0, db = 0;
    for (int y = 0; y < clean.grid.h(); ++y)
        for (int x = 0; x < clean.grid.w(); ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * clean.grid.w() + x;
            auto [pb_c, pt_c] = ref_probs(clean.grid.at(y, x, 0), clean.grid.at(y, x, 1));
            auto [pb_a, pt_a] = ref_probs(adv.grid.at(y, x, 0), adv.grid.at(y, x, 1));
            if (m.target_mask[i]) dt += pt_a - pt_c;
            if (m.background_mask[i]) db += pb_a - pb_c;
        }
    const double sign = cfg.background_sign == Errata::IntentCorrected ? -1.0 : 1.0;
    return cfg.phi / n * (dt + sign * db);
}

double ref_box_drift(const RegressionMap& reg, const RegionMasks& m, const AttackConfig& cfg) {
    if (m.n_target == 0) return 0.0;
    double shrink = 0, drift = 0;
    for (int y = 0; y < reg.grid.h(); ++y)
        for (int x = 0; x < reg.grid.w(); ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * reg.grid.w() + x;
            if (!m.target_mask[i]) continue;
            const double rx = reg.grid.at(y, x, 0), ry = reg.grid.at(y, x, 1);
            const double rw = reg.grid.at(y, x, 2), rh = reg.grid.at(y, x, 3);
            shrink += std::max(rw + rh, cfg.tau_b);
            drift += std::min(rx * rx + ry * ry, cfg.tau_c);
        }
    return cfg.beta / m.n_target * shrink - cfg.alpha / m.n_target * drift;
}

double ref_perceptibility(const Image& clean, const Image& adv, const AttackConfig& cfg) {
    double s = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const double d = static_cast<double>(adv[i]) - static_cast<double>(clean[i]);
        s += d * d;
    }
    return cfg.gamma / static_cast<double>(clean.size()) * std::sqrt(s);
}

// Finite-difference harness over double graphs (same contract as the tape
// tests: mixed tolerance |a - fd| <= tol * max(1, |a|, |fd|)).
using Builder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

double eval_scalar(const std::vector<Tensor<double>>& xs, const Builder& build) {
    Graph<double> g;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(g.leaf(x, false));
    return g.val(build(g, vars))[0];
}

void check_grads(const std::vector<Tensor<double>>& xs, const Builder& build, double tol = 1e-4,
                 double h = 1e-6) {
    Graph<double> g;
    std::vector<Var> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(g.leaf(x, true));
    Var out = build(g, vars);
    REQUIRE(g.val(out).size() == 1);
    g.backward(out);
    std::vector<Tensor<double>> analytic;
    for (Var v : vars) analytic.push_back(g.grad(v));

    for (std::size_t t = 0; t < xs.size(); ++t) {
        for (std::size_t i = 0; i < xs[t].size(); ++i) {
            auto xp = xs;
            auto xm = xs;
            xp[t][i] += h;
            xm[t][i] -= h;
            const double fd = (eval_scalar(xp, build) - eval_scalar(xm, build)) / (2 * h);
            const double a = analytic[t][i];
            const double err = std::abs(a - fd);
            const double scale = std::max({1.0, std::abs(a), std::abs(fd)});
            if (err > tol * scale) {
                CAPTURE(t);
                CAPTURE(i);
                CAPTURE(a);
                CAPTURE(fd);
                REQUIRE(err <= tol * scale);
            }
        }
    }
}

}  // namespace

TEST_CASE("class probabilities match hand softmax") {
    ScoreMap s = make_score(1, 2, [](int, int x) {
        return x == 0 ? std::pair{0.0f, 0.0f} : std::pair{0.0f, static_cast<float>(std::log(3.0))};
    });
    auto [pb, pt] = class_probs(s);
    CHECK(pb.at(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(pt.at(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-7));
    CHECK(pb.at(0, 1, 0) == doctest::Approx(0.25).epsilon(1e-7));
    CHECK(pt.at(0, 1, 0) == doctest::Approx(0.75).epsilon(1e-7));
}

TEST_CASE("class probabilities sum to one per cell") {
    Rng rng(11);
    ScoreMap s = random_score(rng, 5, 5, -6.0, 6.0);
    auto [pb, pt] = class_probs(s);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            CHECK(pb.at(y, x, 0) + pt.at(y, x, 0) == doctest::Approx(1.0).epsilon(1e-6));
            CHECK(pb.at(y, x, 0) >= 0.0f);
            CHECK(pt.at(y, x, 0) >= 0.0f);
        }
}

TEST_CASE("class probabilities reject non-finite logits") {
    Tensor<float> g(1, 1, 2);
    g[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(class_probs(ScoreMap(std::move(g))), InvalidInput);
}

TEST_CASE("masks are empty for a uniform half-probability map") {
    ScoreMap s = make_score(4, 4, [](int, int) { return std::pair{0.0f, 0.0f}; });
    AttackConfig cfg;
    RegionMasks m = region_masks(s, cfg);
    CHECK(m.n_target == 0);
    CHECK(m.n_background == 0);
    for (std::size_t i = 0; i < m.target_mask.size(); ++i) {
        CHECK(m.target_mask[i] == 0);
        CHECK(m.background_mask[i] == 0);
    }
}

TEST_CASE("masks split a spiked map into target center and background ring") {
    AttackConfig cfg;
    RegionMasks m = region_masks(spike_map(), cfg);
    CHECK(m.n_target == 1);
    CHECK(m.n_background == 8);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * 3 + x;
            CHECK(m.target_mask[i] == ((y == 1 && x == 1) ? 1 : 0));
            CHECK(m.background_mask[i] == ((y == 1 && x == 1) ? 0 : 1));
        }
}

TEST_CASE("literal background threshold yields empty background masks") {
    AttackConfig cfg;
    cfg.mask_rule = Errata::PaperLiteral;
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        ScoreMap s = random_score(rng, 5, 5, -8.0, 8.0);
        RegionMasks m = region_masks(s, cfg);
        CHECK(m.n_background == 0);
        for (std::size_t i = 0; i < m.background_mask.size(); ++i) CHECK(m.background_mask[i] == 0);
    }
}

TEST_CASE("masks are disjoint and counts match their popcount") {
    AttackConfig cfg;
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        ScoreMap s = random_score(rng, 6, 4, -3.0, 3.0);
        RegionMasks m = region_masks(s, cfg);
        int nt = 0, nb = 0;
        for (std::size_t i = 0; i < m.target_mask.size(); ++i) {
            CHECK(!(m.target_mask[i] && m.background_mask[i]));
            nt += m.target_mask[i];
            nb += m.background_mask[i];
        }
        CHECK(nt == m.n_target);
        CHECK(nb == m.n_background);
    }
}

TEST_CASE("masks are a pure function of the clean map") {
    AttackConfig cfg;
    Rng rng(47);
    ScoreMap clean = random_score(rng, 5, 5);
    RegionMasks a = region_masks(clean, cfg);
    RegionMasks b = region_masks(clean, cfg);
    REQUIRE(a.n_target == b.n_target);
    REQUIRE(a.n_background == b.n_background);
    for (std::size_t i = 0; i < a.target_mask.size(); ++i) {
        CHECK(a.target_mask[i] == b.target_mask[i]);
        CHECK(a.background_mask[i] == b.background_mask[i]);
    }

    ScoreMap adv1 = random_score(rng, 5, 5);
    ScoreMap adv2 = random_score(rng, 5, 5);
    const double l1 = score_reversal_loss(clean, adv1, a, cfg);
    const double l2 = score_reversal_loss(clean, adv1, b, cfg);
    CHECK(l1 == l2);
    CHECK(score_reversal_loss(clean, adv2, a, cfg) != l1);
}

TEST_CASE("score reversal is exactly zero for identical maps") {
    AttackConfig cfg;
    ScoreMap clean = spike_map();
    RegionMasks m = region_masks(clean, cfg);
    REQUIRE(m.n_target + m.n_background > 0);
    CHECK(score_reversal_loss(clean, clean, m, cfg) == 0.0);

    Rng rng(53);
    ScoreMap r = random_score(rng, 7, 3);
    RegionMasks mr = region_masks(r, cfg);
    CHECK(score_reversal_loss(r, r, mr, cfg) == 0.0);
}

TEST_CASE("score reversal hand value on a single target cell") {
    const float l9 = static_cast<float>(std::log(9.0));
    const float l23 = static_cast<float>(std::log(2.0 / 3.0));
    ScoreMap clean = make_score(1, 1, [&](int, int) { return std::pair{0.0f, l9}; });
    ScoreMap adv = make_score(1, 1, [&](int, int) { return std::pair{0.0f, l23}; });
    AttackConfig cfg;
    RegionMasks m = region_masks(clean, cfg);
    REQUIRE(m.n_target == 1);
    REQUIRE(m.n_background == 0);
    CHECK(score_reversal_loss(clean, adv, m, cfg) == doctest::Approx(-0.5).epsilon(1e-7));
}

TEST_CASE("score reversal with empty masks is exactly zero") {
    AttackConfig cfg;
    ScoreMap clean = make_score(4, 4, [](int, int) { return std::pair{0.0f, 0.0f}; });
    RegionMasks m = region_masks(clean, cfg);
    REQUIRE(m.n_target + m.n_background == 0);
    Rng rng(59);
    ScoreMap adv = random_score(rng, 4, 4);
    CHECK(score_reversal_loss(clean, adv, m, cfg) == 0.0);
}

TEST_CASE("score reversal matches the direct formula under both sign conventions") {
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        ScoreMap clean = random_score(rng, 5, 5);
        ScoreMap adv = random_score(rng, 5, 5);
        for (Errata sign : {Errata::IntentCorrected, Errata::PaperLiteral}) {
            AttackConfig cfg;
            cfg.background_sign = sign;
            RegionMasks m = region_masks(clean, cfg);
            const double got = score_reversal_loss(clean, adv, m, cfg);
            const double want = ref_score_reversal(clean, adv, m, cfg);
            CHECK(got == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("score reversal scales linearly in phi") {
    Rng rng(67);
    ScoreMap clean = random_score(rng, 5, 5);
    ScoreMap adv = random_score(rng, 5, 5);
    AttackConfig cfg;
    RegionMasks m = region_masks(clean, cfg);
    const double base = score_reversal_loss(clean, adv, m, cfg);
    AttackConfig dbl = cfg;
    dbl.phi = 2.0 * cfg.phi;
    CHECK(score_reversal_loss(clean, adv, m, dbl) == 2.0 * base);
    AttackConfig zero = cfg;
    zero.phi = 0.0;
    CHECK(score_reversal_loss(clean, adv, m, zero) == 0.0);
}

TEST_CASE("box drift is zero for zero regression at defaults") {
    AttackConfig cfg;
    RegionMasks m = region_masks(spike_map(), cfg);
    REQUIRE(m.n_target == 1);
    Tensor<float> g(3, 3, 4);
    CHECK(box_drift_loss(RegressionMap(std::move(g)), m, cfg) == 0.0);
}

TEST_CASE("box drift floor clamp caps the shrink term") {
    AttackConfig cfg;
    RegionMasks m = region_masks(spike_map(), cfg);
    Tensor<float> g(3, 3, 4);
    g.at(1, 1, 2) = -4.0f;
    g.at(1, 1, 3) = -6.0f;
    CHECK(box_drift_loss(RegressionMap(std::move(g)), m, cfg) == -50.0);
}

TEST_CASE("box drift offset cap bounds the drift term") {
    AttackConfig cfg;
    RegionMasks m = region_masks(spike_map(), cfg);
    Tensor<float> g(3, 3, 4);
    g.at(1, 1, 0) = 3.0f;
    g.at(1, 1, 1) = 2.0f;
    CHECK(box_drift_loss(RegressionMap(std::move(g)), m, cfg) == -10.0);
}

TEST_CASE("box drift with no target cells is exactly zero") {
    AttackConfig cfg;
    ScoreMap clean = make_score(3, 3, [](int, int) { return std::pair{0.0f, 0.0f}; });
    RegionMasks m = region_masks(clean, cfg);
    REQUIRE(m.n_target == 0);
    Rng rng(71);
    RegressionMap reg = random_reg(rng, 3, 3, -2.0, 2.0);
    CHECK(box_drift_loss(reg, m, cfg) == 0.0);
}

TEST_CASE("box drift matches the direct formula") {
    Rng rng(73);
    for (int trial = 0; trial < 20; ++trial) {
        ScoreMap clean = random_score(rng, 5, 5);
        AttackConfig cfg;
        RegionMasks m = region_masks(clean, cfg);
        RegressionMap reg = random_reg(rng, 5, 5, -4.0, 4.0);
        const double got = box_drift_loss(reg, m, cfg);
        const double want = ref_box_drift(reg, m, cfg);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("box drift scales linearly when alpha and beta double jointly") {
    Rng rng(79);
    ScoreMap clean = random_score(rng, 5, 5);
    AttackConfig cfg;
    RegionMasks m = region_masks(clean, cfg);
    RegressionMap reg = random_reg(rng, 5, 5, -3.0, 3.0);
    const double base = box_drift_loss(reg, m, cfg);
    AttackConfig dbl = cfg;
    dbl.alpha = 2.0 * cfg.alpha;
    dbl.beta = 2.0 * cfg.beta;
    CHECK(box_drift_loss(reg, m, dbl) == 2.0 * base);
}

TEST_CASE("perceptibility is exactly zero at identity") {
    Rng rng(83);
    Image img(8, 8, 3);
    img.fill_uniform(rng, 0.0, 1.0);
    AttackConfig cfg;
    CHECK(perceptibility_loss(img, img, cfg) == 0.0);
}

TEST_CASE("perceptibility hand values") {
    AttackConfig cfg;
    Image clean(1, 1, 1), adv(1, 1, 1);
    clean[0] = 0.2f;
    adv[0] = 0.3f;
    CHECK(perceptibility_loss(clean, adv, cfg) == doctest::Approx(70.0).epsilon(1e-6));

    clean[0] = 0.25f;
    adv[0] = 0.5f;
    CHECK(perceptibility_loss(clean, adv, cfg) == 175.0);
}

TEST_CASE("perceptibility is symmetric in its arguments") {
    Rng rng(89);
    Image a(4, 5, 3), b(4, 5, 3);
    a.fill_uniform(rng, 0.0, 1.0);
    b.fill_uniform(rng, 0.0, 1.0);
    AttackConfig cfg;
    CHECK(perceptibility_loss(a, b, cfg) == perceptibility_loss(b, a, cfg));
}

TEST_CASE("perceptibility normalizes by pixel times channel count") {
    AttackConfig cfg;
    Image clean(2, 2, 3), adv(2, 2, 3);
    adv.fill(0.5f);
    const double want = cfg.gamma / 12.0 * std::sqrt(12.0 * 0.25);
    CHECK(perceptibility_loss(clean, adv, cfg) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("perceptibility matches the direct formula") {
    Rng rng(93);
    AttackConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        Image a(5, 4, 3), b(5, 4, 3);
        a.fill_uniform(rng, 0.0, 1.0);
        b.fill_uniform(rng, 0.0, 1.0);
        CHECK(perceptibility_loss(a, b, cfg) == doctest::Approx(ref_perceptibility(a, b, cfg)).epsilon(1e-12));
    }
}

TEST_CASE("perceptibility rejects mismatched shapes") {
    AttackConfig cfg;
    Image a(2, 2, 3), b(2, 3, 3);
    CHECK_THROWS_AS(perceptibility_loss(a, b, cfg), InvalidInput);
}

TEST_CASE("perceptibility scales linearly in gamma") {
    Rng rng(97);
    Image a(4, 4, 3), b(4, 4, 3);
    a.fill_uniform(rng, 0.0, 1.0);
    b.fill_uniform(rng, 0.0, 1.0);
    AttackConfig cfg;
    const double base = perceptibility_loss(a, b, cfg);
    AttackConfig dbl = cfg;
    dbl.gamma = 2.0 * cfg.gamma;
    CHECK(perceptibility_loss(a, b, dbl) == 2.0 * base);
}

TEST_CASE("total loss at identity reduces to the clean drift") {
    Rng rng(101);
    Image patch(6, 6, 3);
    patch.fill_uniform(rng, 0.0, 1.0);
    TrackerOutput out;
    out.score = random_score(rng, 5, 5);
    out.regression = random_reg(rng, 5, 5, -2.0, 2.0);
    AttackConfig cfg;
    LossBreakdown b = total_loss(patch, patch, out, out, cfg);
    CHECK(b.score == 0.0);
    CHECK(b.l2 == 0.0);
    RegionMasks m = region_masks(out.score, cfg);
    CHECK(b.drift == box_drift_loss(out.regression, m, cfg));
    CHECK(b.total == b.drift);
}

TEST_CASE("loss components sum to the total") {
    Rng rng(103);
    for (int trial = 0; trial < 10; ++trial) {
        Image clean(6, 6, 3), adv(6, 6, 3);
        clean.fill_uniform(rng, 0.0, 1.0);
        adv.fill_uniform(rng, 0.0, 1.0);
        TrackerOutput co, ao;
        co.score = random_score(rng, 5, 5);
        co.regression = random_reg(rng, 5, 5, -2.0, 2.0);
        ao.score = random_score(rng, 5, 5);
        ao.regression = random_reg(rng, 5, 5, -2.0, 2.0);
        AttackConfig cfg;
        LossBreakdown b = total_loss(clean, adv, co, ao, cfg);
        CHECK(std::abs(b.total - (b.score + b.drift + b.l2)) <= 1e-9);
    }
}

TEST_CASE("doubling gamma doubles only the perceptibility component") {
    Rng rng(107);
    Image clean(6, 6, 3), adv(6, 6, 3);
    clean.fill_uniform(rng, 0.0, 1.0);
    adv.fill_uniform(rng, 0.0, 1.0);
    TrackerOutput co, ao;
    co.score = random_score(rng, 5, 5);
    co.regression = random_reg(rng, 5, 5, -2.0, 2.0);
    ao.score = random_score(rng, 5, 5);
    ao.regression = random_reg(rng, 5, 5, -2.0, 2.0);
    AttackConfig cfg;
    LossBreakdown base = total_loss(clean, adv, co, ao, cfg);
    AttackConfig dbl = cfg;
    dbl.gamma = 2.0 * cfg.gamma;
    LossBreakdown b = total_loss(clean, adv, co, ao, dbl);
    CHECK(b.l2 == 2.0 * base.l2);
    CHECK(b.score == base.score);
    CHECK(b.drift == base.drift);
}

TEST_CASE("score reversal gradient matches finite differences") {
    Rng rng(109);
    for (int trial = 0; trial < 20; ++trial) {
        ScoreMap clean = random_score(rng, 5, 5);
        AttackConfig cfg;
        cfg.background_sign = trial % 2 ? Errata::PaperLiteral : Errata::IntentCorrected;
        RegionMasks m = region_masks(clean, cfg);
        if (m.n_target + m.n_background == 0) continue;
        Tensor<double> adv(5, 5, 2);
        adv.fill_uniform(rng, -2.0, 2.0);
        check_grads({adv}, [&](Graph<double>& g, const std::vector<Var>& v) {
            return score_reversal_g(g, v[0], clean, m, cfg);
        });
    }
}

TEST_CASE("box drift gradient matches finite differences away from clamp kinks") {
    Rng rng(113);
    // Defaults first: values in [-2, 2] keep every cell far from both clamps.
    for (int trial = 0; trial < 20; ++trial) {
        ScoreMap clean = random_score(rng, 5, 5);
        AttackConfig cfg;
        RegionMasks m = region_masks(clean, cfg);
        if (m.n_target == 0) continue;
        Tensor<double> reg(5, 5, 4);
        reg.fill_uniform(rng, -2.0, 2.0);
        check_grads({reg}, [&](Graph<double>& g, const std::vector<Var>& v) {
            return box_drift_g(g, v[0], m, cfg);
        });
    }

    // Tight clamps so both branches are exercised; resample any draw that
    // leaves a target cell within 1e-3 of a kink.
    AttackConfig tight;
    tight.tau_b = 0.0;
    tight.tau_c = 2.0;
    for (int trial = 0; trial < 20; ++trial) {
        ScoreMap clean = random_score(rng, 5, 5);
        RegionMasks m = region_masks(clean, tight);
        if (m.n_target == 0) continue;
        Tensor<double> reg(5, 5, 4);
        bool clear = false;
        for (int attempt = 0; attempt < 200 && !clear; ++attempt) {
            reg.fill_uniform(rng, -1.5, 1.5);
            clear = true;
            for (int y = 0; y < 5 && clear; ++y)
                for (int x = 0; x < 5 && clear; ++x) {
                    if (!m.target_mask[static_cast<std::size_t>(y) * 5 + x]) continue;
                    const double rw = reg.at(y, x, 2), rh = reg.at(y, x, 3);
                    const double rx = reg.at(y, x, 0), ry = reg.at(y, x, 1);
                    if (std::abs(rw + rh - tight.tau_b) <= 1e-3) clear = false;
                    if (std::abs(rx * rx + ry * ry - tight.tau_c) <= 1e-3) clear = false;
                }
        }
        REQUIRE(clear);
        check_grads({reg}, [&](Graph<double>& g, const std::vector<Var>& v) {
            return box_drift_g(g, v[0], m, tight);
        });
    }
}

TEST_CASE("perceptibility gradient matches finite differences") {
    Rng rng(127);
    AttackConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> clean(5, 5, 3), adv(5, 5, 3);
        clean.fill_uniform(rng, 0.0, 1.0);
        adv.fill_uniform(rng, 0.0, 1.0);
        check_grads({adv}, [&](Graph<double>& g, const std::vector<Var>& v) {
            return perceptibility_g(g, v[0], g.constant(clean), cfg);
        });
    }
}

TEST_CASE("full objective gradient matches finite differences") {
    Rng rng(131);
    ScoreMap clean_score = random_score(rng, 5, 5);
    AttackConfig cfg;
    RegionMasks m = region_masks(clean_score, cfg);
    REQUIRE(m.n_target + m.n_background > 0);
    Tensor<double> clean_patch(6, 6, 3);
    clean_patch.fill_uniform(rng, 0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor<double> adv_score(5, 5, 2), adv_reg(5, 5, 4), adv_patch(6, 6, 3);
        adv_score.fill_uniform(rng, -2.0, 2.0);
        adv_reg.fill_uniform(rng, -2.0, 2.0);
        adv_patch.fill_uniform(rng, 0.0, 1.0);
        check_grads({adv_score, adv_reg, adv_patch}, [&](Graph<double>& g, const std::vector<Var>& v) {
            return total_loss_g(g, v[0], v[1], v[2], g.constant(clean_patch), clean_score, m, cfg).total;
        });
    }
}

TEST_CASE("heatmap of a constant-output head is all zero") {
    Rng rng(137);
    ToyTracker t = ToyTracker::init(VictimConfig{}, rng);
    t.params.get("cls1.w").fill(0.0f);
    t.params.get("cls1.b").fill(0.3f);
    Image frame(96, 96, 3);
    frame.fill_uniform(rng, 0.0, 1.0);
    TemplateFeat tmpl = t.init_template(frame, BBox::from_tl(30, 30, 30, 30));
    Image patch(64, 64, 3);
    patch.fill_uniform(rng, 0.0, 1.0);
    Tensor<float> hm = heatmap(t, tmpl, patch);
    REQUIRE(hm.h() == 64);
    REQUIRE(hm.w() == 64);
    for (std::size_t i = 0; i < hm.size(); ++i) CHECK(hm[i] == 0.0f);
}

TEST_CASE("heatmap is normalized to [0,1] with unit peak") {
    Rng rng(139);
    ToyTracker t = ToyTracker::init(VictimConfig{}, rng);
    Image frame(96, 96, 3);
    frame.fill_uniform(rng, 0.0, 1.0);
    TemplateFeat tmpl = t.init_template(frame, BBox::from_tl(30, 30, 30, 30));
    Image patch(64, 64, 3);
    patch.fill_uniform(rng, 0.0, 1.0);
    Tensor<float> hm = heatmap(t, tmpl, patch);
    float peak = 0.0f;
    for (std::size_t i = 0; i < hm.size(); ++i) {
        CHECK(hm[i] >= 0.0f);
        CHECK(hm[i] <= 1.0f);
        peak = std::max(peak, hm[i]);
    }
    CHECK(peak == 1.0f);
}

TEST_CASE("heatmap is deterministic") {
    Rng rng(149);
    ToyTracker t = ToyTracker::init(VictimConfig{}, rng);
    Image frame(96, 96, 3);
    frame.fill_uniform(rng, 0.0, 1.0);
    TemplateFeat tmpl = t.init_template(frame, BBox::from_tl(30, 30, 30, 30));
    Image patch(64, 64, 3);
    patch.fill_uniform(rng, 0.0, 1.0);
    Tensor<float> a = heatmap(t, tmpl, patch);
    Tensor<float> b = heatmap(t, tmpl, patch);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
