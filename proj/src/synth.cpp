#include "ad2/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ad2/errors.hpp"
#include "ad2/image_io.hpp"

namespace ad2 {
namespace {

constexpr double kTau = 6.283185307179586;

// Position-keyed value noise, independent of evaluation order.
float hash_noise(std::uint64_t seed, int x, int y, int c) {
    std::uint64_t z = seed ^ (static_cast<std::uint64_t>(x) * 0x9e3779b97f4a7c15ULL) ^
                      (static_cast<std::uint64_t>(y) * 0xbf58476d1ce4e5b9ULL) ^
                      (static_cast<std::uint64_t>(c) * 0x94d049bb133111ebULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return static_cast<float>((z >> 11) * 0x1.0p-53);
}

struct Palette {
    double bg_base[3];
    double bg_freq[2][3];   // two sinusoid fields x/y freq per field... frequencies per field
    double bg_phase[2][3];  // per channel phase
    double bg_amp;
    double tg_base[3];
    double tg_freq[2];
    double tg_phase[3];
    double tg_amp;
    std::uint64_t noise_seed;
};

Palette make_palette(Rng& rng) {
    Palette p{};
    for (int c = 0; c < 3; ++c) p.bg_base[c] = rng.uniform(0.35, 0.55);
    for (int f = 0; f < 2; ++f)
        for (int c = 0; c < 3; ++c) {
            p.bg_freq[f][c] = rng.uniform(0.01, 0.04);
            p.bg_phase[f][c] = rng.uniform(0.0, kTau);
        }
    p.bg_amp = rng.uniform(0.08, 0.14);
    for (int c = 0; c < 3; ++c) p.tg_base[c] = rng.uniform(0.15, 0.85);
    // target texture is much finer than the background so it stays distinct
    p.tg_freq[0] = rng.uniform(0.25, 0.5);
    p.tg_freq[1] = rng.uniform(0.25, 0.5);
    for (int c = 0; c < 3; ++c) p.tg_phase[c] = rng.uniform(0.0, kTau);
    p.tg_amp = rng.uniform(0.18, 0.28);
    p.noise_seed = rng.next_u64();
    return p;
}

float bg_value(const Palette& p, int x, int y, int c) {
    const double v = p.bg_base[c] +
                     p.bg_amp * std::sin(kTau * p.bg_freq[0][c] * x + p.bg_phase[0][c]) *
                         std::cos(kTau * p.bg_freq[1][c] * y + p.bg_phase[1][c]) +
                     0.03 * (hash_noise(p.noise_seed, x, y, c) - 0.5);
    return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

float tg_value(const Palette& p, double u, double v, int c) {
    const double s = p.tg_base[c] + p.tg_amp * std::sin(kTau * p.tg_freq[0] * u + p.tg_phase[c]) *
                                        std::sin(kTau * p.tg_freq[1] * v + p.tg_phase[(c + 1) % 3]);
    return static_cast<float>(std::min(1.0, std::max(0.0, s)));
}

// Overlap of the unit pixel [px, px+1) with the interval [lo, hi).
double coverage(double px, double lo, double hi) {
    return std::max(0.0, std::min(px + 1.0, hi) - std::max(px, lo));
}

}  // namespace

SynthSequence make_synth_sequence(std::uint64_t seed, int seq_index, int frames, int width, int height) {
    if (frames < 1 || width < 64 || height < 64) throw InvalidInput("make_synth_sequence: degenerate request");
    Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(seq_index));
    const Palette pal = make_palette(rng);

    // base side cycles so context crops span pyramid depths 1..5
    static const int kSizes[] = {12, 16, 20, 26, 32, 14, 22, 28, 18, 24};
    const double s = kSizes[seq_index % 10] * rng.uniform(0.95, 1.05);
    const double aspect = rng.uniform(0.85, 1.18);
    const double tw = s * aspect;
    const double th = s / aspect;

    const double mx = tw / 2 + 10, my = th / 2 + 10;  // motion margins
    const double ax = rng.uniform(0.10, 0.22) * width;
    const double ay = rng.uniform(0.10, 0.22) * height;
    const double fx = rng.uniform(0.5, 1.2) / frames;
    const double fy = rng.uniform(0.5, 1.2) / frames;
    const double phx = rng.uniform(0.0, kTau), phy = rng.uniform(0.0, kTau);
    const double vx = rng.uniform(-0.5, 0.5), vy = rng.uniform(-0.5, 0.5);
    const double cx0 = width / 2.0 + rng.uniform(-0.08, 0.08) * width;
    const double cy0 = height / 2.0 + rng.uniform(-0.08, 0.08) * height;

    Image background(height, width, 3);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) background.at(y, x, c) = bg_value(pal, x, y, c);

    SynthSequence out;
    out.frames.reserve(static_cast<std::size_t>(frames));
    out.boxes.reserve(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        BBox box;
        box.cx = std::clamp(cx0 + ax * std::sin(kTau * fx * t + phx) + vx * t, mx, width - mx);
        box.cy = std::clamp(cy0 + ay * std::sin(kTau * fy * t + phy) + vy * t, my, height - my);
        box.w = tw;
        box.h = th;

        Image frame = background;
        const int x_lo = std::max(0, static_cast<int>(std::floor(box.x0())));
        const int x_hi = std::min(width - 1, static_cast<int>(std::ceil(box.x1())));
        const int y_lo = std::max(0, static_cast<int>(std::floor(box.y0())));
        const int y_hi = std::min(height - 1, static_cast<int>(std::ceil(box.y1())));
        for (int y = y_lo; y <= y_hi; ++y) {
            const double cov_y = coverage(y, box.y0(), box.y1());
            if (cov_y <= 0) continue;
            for (int x = x_lo; x <= x_hi; ++x) {
                const double cov = cov_y * coverage(x, box.x0(), box.x1());
                if (cov <= 0) continue;
                const double u = x + 0.5 - box.cx;  // texture rides with the target
                const double v = y + 0.5 - box.cy;
                float* px = frame.row(y, x);
                for (int c = 0; c < 3; ++c) {
                    const float tv = tg_value(pal, u, v, c);
                    px[c] = static_cast<float>(cov * tv + (1.0 - cov) * px[c]);
                }
            }
        }
        out.frames.push_back(std::move(frame));
        out.boxes.push_back(box);
    }
    return out;
}

void write_synth_corpus(const std::string& out_dir, std::uint64_t seed, int sequences, int frames, int width,
                        int height) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create directory: " + out_dir);
    for (int s = 0; s < sequences; ++s) {
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%03d", s);
        const fs::path seq_dir = fs::path(out_dir) / name;
        fs::create_directories(seq_dir / "frames", ec);
        if (ec) throw IoError("cannot create directory: " + (seq_dir / "frames").string());

        const SynthSequence seq = make_synth_sequence(seed, s, frames, width, height);
        std::ofstream gt(seq_dir / "groundtruth.txt");
        if (!gt) throw IoError("cannot write groundtruth: " + (seq_dir / "groundtruth.txt").string());
        for (int t = 0; t < frames; ++t) {
            char fname[32];
            std::snprintf(fname, sizeof(fname), "%06d.png", t);
            save_image((seq_dir / "frames" / fname).string(), seq.frames[static_cast<std::size_t>(t)]);
            const BBox& b = seq.boxes[static_cast<std::size_t>(t)];
            char line[128];
            std::snprintf(line, sizeof(line), "%.4f,%.4f,%.4f,%.4f\n", b.x0(), b.y0(), b.w, b.h);
            gt << line;
        }
        if (!gt) throw IoError("groundtruth write failed for " + seq_dir.string());
    }
}

}  // namespace ad2
