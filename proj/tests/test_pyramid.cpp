#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <vector>

#include "ad2/resample_attack.hpp"
#include "ad2/rng.hpp"

using namespace ad2;

namespace {

struct Geometry {
    int search, ph, pw, fh, fw;
};

// Exact integer evaluation of floor(sqrt(search * patch_area / frame_area)):
// the largest n with n^2 * frame_area <= search * patch_area. Integer-only,
// no floating point anywhere.
int exact_raw_levels(const Geometry& g) {
    const std::int64_t a = static_cast<std::int64_t>(g.search) * g.ph * g.pw;
    const std::int64_t b = static_cast<std::int64_t>(g.fh) * g.fw;
    int n = 0;
    while (static_cast<std::int64_t>(n + 1) * (n + 1) * b <= a) ++n;
    return n;
}

SearchGeometry make_geom(const Geometry& g) {
    SearchGeometry sg;
    sg.search_size = g.search;
    sg.patch_h = g.ph;
    sg.patch_w = g.pw;
    sg.frame_h = g.fh;
    sg.frame_w = g.fw;
    return sg;
}

}  // namespace

TEST_CASE("adaptive level count matches exact integer arithmetic on 20 geometries") {
    // relative patch area spans ~1e-4 .. 1
    const std::vector<Geometry> cases = {
        {128, 3, 3, 320, 240},     // ~1.2e-4
        {128, 4, 6, 320, 240},     {64, 8, 8, 320, 240},      {128, 8, 8, 320, 240},
        {255, 10, 8, 320, 240},    {128, 16, 16, 320, 240},   {128, 24, 20, 320, 240},
        {128, 48, 50, 320, 240},   // exactly n = 2 at the boundary
        {128, 49, 50, 320, 240},   {128, 47, 50, 320, 240},   {255, 64, 64, 320, 240},
        {256, 96, 80, 320, 240},   {128, 120, 120, 320, 240}, {255, 160, 120, 320, 240},
        {256, 320, 240, 320, 240},  // full frame, Q = 1
        {512, 320, 240, 320, 240}, {64, 64, 64, 64, 64},      {100, 50, 50, 100, 100},
        {400, 200, 200, 400, 400}, {512, 512, 512, 512, 512},
    };
    REQUIRE(cases.size() == 20);
    for (const auto& c : cases) {
        const SearchGeometry sg = make_geom(c);
        const int want_raw = exact_raw_levels(c);
        CAPTURE(c.search);
        CAPTURE(c.ph);
        CAPTURE(c.pw);
        CHECK(raw_pyramid_levels(sg) == want_raw);
        CHECK(adaptive_pyramid_levels(sg) == std::max(1, std::min(5, want_raw)));
    }
}

TEST_CASE("perfect-square boundary is hit exactly") {
    // search * area / frame_area == 4 exactly; floor(sqrt) must be 2, not 1
    SearchGeometry sg = make_geom({128, 48, 50, 320, 240});
    CHECK(raw_pyramid_levels(sg) == 2);
}

TEST_CASE("raw level count is monotone in patch area") {
    int prev = -1;
    for (int side = 2; side <= 240; ++side) {
        const SearchGeometry sg = make_geom({128, side, side, 320, 240});
        const int n = raw_pyramid_levels(sg);
        CHECK(n >= prev);
        prev = n;
    }
}

TEST_CASE("clamping to [1,5]") {
    CHECK(adaptive_pyramid_levels(make_geom({128, 3, 3, 320, 240})) == 1);   // raw 0
    CHECK(raw_pyramid_levels(make_geom({512, 512, 512, 512, 512})) == 22);   // sqrt(512)
    CHECK(adaptive_pyramid_levels(make_geom({512, 512, 512, 512, 512})) == 5);
}

TEST_CASE("degenerate geometry is rejected") {
    SearchGeometry sg = make_geom({128, 64, 64, 0, 0});
    CHECK_THROWS_AS(raw_pyramid_levels(sg), InvalidInput);
    SearchGeometry sg2 = make_geom({128, 400, 400, 320, 240});  // patch larger than frame
    CHECK_THROWS_AS(raw_pyramid_levels(sg2), InvalidInput);
}

TEST_CASE("alignment pads up to the pyramid multiple and restores") {
    Rng rng(31);
    Image img(130, 70, 3);
    img.fill_uniform(rng, 0.0f, 1.0f);
    auto [aligned, recipe] = align_for_pyramid(img, 3);
    CHECK(aligned.h() == 136);
    CHECK(aligned.w() == 72);
    CHECK_FALSE(recipe.identity());
    const Image back = restore(recipe, aligned);
    CHECK(back.h() == 130);
    CHECK(back.w() == 70);
}

TEST_CASE("already aligned input is passed through untouched") {
    Rng rng(32);
    Image img(64, 96, 3);
    img.fill_uniform(rng, 0.0f, 1.0f);
    auto [aligned, recipe] = align_for_pyramid(img, 5);
    CHECK(recipe.identity());
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(aligned[i] == img[i]);
    const Image back = restore(recipe, aligned);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == img[i]);
}

TEST_CASE("decimation keeps exact pixels, no averaging") {
    Image img(8, 8, 3);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(y * 8 + x) / 64.0f;
    const Image lo = did_downsample(img, 2);
    REQUIRE(lo.h() == 2);
    REQUIRE(lo.w() == 2);
    CHECK(lo.at(0, 0, 0) == img.at(0, 0, 0));
    CHECK(lo.at(0, 1, 0) == img.at(0, 4, 0));
    CHECK(lo.at(1, 0, 1) == img.at(4, 0, 1));
    CHECK(lo.at(1, 1, 2) == img.at(4, 4, 2));
}

TEST_CASE("decimating a 2-periodic checkerboard yields a constant image") {
    Image img(16, 16, 3);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = ((y + x) % 2) ? 1.0f : 0.25f;
    const Image lo = did_downsample(img, 1);
    for (std::size_t i = 0; i < lo.size(); ++i) CHECK(lo[i] == 0.25f);
}

TEST_CASE("decimation rejects non-divisible sizes") {
    Image img(10, 10, 3);
    CHECK_THROWS_AS(did_downsample(img, 2), InvalidInput);  // 10 % 4 != 0
    CHECK_NOTHROW(did_downsample(img, 1));
}

TEST_CASE("pyramid config validation") {
    PyramidConfig ok;
    CHECK_NOTHROW(ok.validate());
    PyramidConfig bad = ok;
    bad.levels = 6;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.feature_channels = 30;  // not divisible by 4 groups
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.att_kernel = 4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
