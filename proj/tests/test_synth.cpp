#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ad2/corpus.hpp"
#include "ad2/resample_attack.hpp"
#include "ad2/synth.hpp"
#include "ad2/victim.hpp"

using namespace ad2;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), {});
}

std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& root) {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
        if (e.is_regular_file()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("same seed writes bit-identical corpora") {
    TempDir tmp("ad2-synth-det");
    const auto a = tmp.path / "a";
    const auto b = tmp.path / "b";
    write_synth_corpus(a.string(), 777, 2, 4, 96, 96);
    write_synth_corpus(b.string(), 777, 2, 4, 96, 96);

    auto fa = sorted_files(a);
    auto fb = sorted_files(b);
    REQUIRE(fa.size() == fb.size());
    REQUIRE(fa.size() == 2 * (4 + 1));
    for (std::size_t i = 0; i < fa.size(); ++i) {
        CHECK(fa[i].lexically_relative(a) == fb[i].lexically_relative(b));
        CHECK(slurp(fa[i]) == slurp(fb[i]));
    }
}

TEST_CASE("different seeds produce different corpora") {
    TempDir tmp("ad2-synth-seed");
    const auto a = tmp.path / "a";
    const auto b = tmp.path / "b";
    write_synth_corpus(a.string(), 1, 1, 3, 96, 96);
    write_synth_corpus(b.string(), 2, 1, 3, 96, 96);
    CHECK(slurp(a / "seq_000" / "groundtruth.txt") != slurp(b / "seq_000" / "groundtruth.txt"));
}

TEST_CASE("in-memory generation is deterministic") {
    SynthSequence a = make_synth_sequence(31, 4, 5, 128, 96);
    SynthSequence b = make_synth_sequence(31, 4, 5, 128, 96);
    REQUIRE(a.frames.size() == 5);
    REQUIRE(a.boxes.size() == 5);
    for (std::size_t f = 0; f < a.frames.size(); ++f) {
        REQUIRE(a.frames[f].same_shape(b.frames[f]));
        for (std::size_t i = 0; i < a.frames[f].size(); ++i) CHECK(a.frames[f][i] == b.frames[f][i]);
        CHECK(a.boxes[f].cx == b.boxes[f].cx);
        CHECK(a.boxes[f].cy == b.boxes[f].cy);
        CHECK(a.boxes[f].w == b.boxes[f].w);
        CHECK(a.boxes[f].h == b.boxes[f].h);
    }
}

TEST_CASE("corpus layout matches the sequence directory format") {
    TempDir tmp("ad2-synth-layout");
    write_synth_corpus(tmp.path.string(), 5, 2, 3, 96, 96);
    for (const char* seq : {"seq_000", "seq_001"}) {
        const auto dir = tmp.path / seq;
        CHECK(std::filesystem::is_directory(dir / "frames"));
        CHECK(std::filesystem::is_regular_file(dir / "frames" / "000000.png"));
        CHECK(std::filesystem::is_regular_file(dir / "frames" / "000002.png"));
        CHECK_FALSE(std::filesystem::exists(dir / "frames" / "000003.png"));
        const std::string gt = slurp(dir / "groundtruth.txt");
        CHECK(std::count(gt.begin(), gt.end(), '\n') == 3);
    }
}

TEST_CASE("groundtruth lines round-trip through the sequence loader") {
    TempDir tmp("ad2-synth-load");
    write_synth_corpus(tmp.path.string(), 9, 1, 4, 96, 96);
    const auto dir = tmp.path / "seq_000";
    Sequence seq = load_sequence(dir.string());
    REQUIRE(seq.size() == 4);

    std::ifstream gt(dir / "groundtruth.txt");
    std::string line;
    std::size_t f = 0;
    while (std::getline(gt, line)) {
        double x, y, w, h;
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &x, &y, &w, &h) == 4);
        const BBox want = BBox::from_tl(x, y, w, h);
        CHECK(seq.boxes[f].cx == want.cx);
        CHECK(seq.boxes[f].cy == want.cy);
        CHECK(seq.boxes[f].w == want.w);
        CHECK(seq.boxes[f].h == want.h);
        ++f;
    }
    CHECK(f == 4);
}

TEST_CASE("boxes stay valid and inside the frame while moving") {
    SynthSequence seq = make_synth_sequence(13, 2, 24, 160, 120);
    double moved = 0;
    for (std::size_t f = 0; f < seq.boxes.size(); ++f) {
        const BBox& b = seq.boxes[f];
        require_valid(b, "synth");
        CHECK(b.x0() >= 0.0);
        CHECK(b.y0() >= 0.0);
        CHECK(b.x1() <= 160.0);
        CHECK(b.y1() <= 120.0);
        if (f > 0) moved += cle(seq.boxes[f], seq.boxes[f - 1]);
    }
    CHECK(moved > 5.0);
}

TEST_CASE("frames are rgb in unit range with the target visibly drawn") {
    SynthSequence seq = make_synth_sequence(17, 1, 3, 96, 96);
    for (const Image& frame : seq.frames) {
        REQUIRE(frame.h() == 96);
        REQUIRE(frame.w() == 96);
        REQUIRE(frame.c() == 3);
        for (std::size_t i = 0; i < frame.size(); ++i) {
            CHECK(frame[i] >= 0.0f);
            CHECK(frame[i] <= 1.0f);
        }
    }
    // The target patch is textured, not a flat fill.
    const Image& f0 = seq.frames[0];
    const BBox& b = seq.boxes[0];
    float lo = 1.0f, hi = 0.0f;
    for (int y = static_cast<int>(b.y0()); y < static_cast<int>(b.y1()); ++y)
        for (int x = static_cast<int>(b.x0()); x < static_cast<int>(b.x1()); ++x) {
            lo = std::min(lo, f0.at(y, x, 0));
            hi = std::max(hi, f0.at(y, x, 0));
        }
    CHECK(hi - lo > 0.05f);
}

TEST_CASE("size ladder spans several pyramid depths") {
    std::set<int> depths;
    for (int idx = 0; idx < 10; ++idx) {
        SynthSequence seq = make_synth_sequence(42, idx, 2, 240, 320);
        const double side = context_side(seq.boxes[0], 2.0);
        SearchGeometry geom{128, side, side, 240, 320};
        depths.insert(adaptive_pyramid_levels(geom));
    }
    CHECK(depths.size() >= 3);
    CHECK(*depths.begin() <= 2);
    CHECK(*depths.rbegin() >= 4);
}

TEST_CASE("degenerate generation requests are rejected") {
    CHECK_THROWS_AS(make_synth_sequence(1, 0, 0, 96, 96), InvalidInput);
    CHECK_THROWS_AS(make_synth_sequence(1, 0, 3, 32, 96), InvalidInput);
}
