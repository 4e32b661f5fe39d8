#pragma once

#include <cmath>
#include <string>

#include "ad2/errors.hpp"

namespace ad2 {

// Axis-aligned box, center convention, frame pixels.
struct BBox {
    double cx = 0, cy = 0, w = 0, h = 0;

    static BBox from_tl(double x, double y, double w, double h) { return {x + w / 2, y + h / 2, w, h}; }

    double x0() const { return cx - w / 2; }
    double y0() const { return cy - h / 2; }
    double x1() const { return cx + w / 2; }
    double y1() const { return cy + h / 2; }
    double area() const { return w * h; }

    bool valid() const {
        return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h) && w > 0 && h > 0;
    }
};

inline void require_valid(const BBox& b, const char* who) {
    if (!b.valid()) throw InvalidInput(std::string(who) + ": degenerate box");
}

// Areas come from the same corner differences as the intersection so that
// iou(a, a) is exactly 1 and the ratio never rounds outside [0, 1].
inline double iou(const BBox& a, const BBox& b) {
    require_valid(a, "iou");
    require_valid(b, "iou");
    const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    const double inter = ix * iy;
    const double area_a = (a.x1() - a.x0()) * (a.y1() - a.y0());
    const double area_b = (b.x1() - b.x0()) * (b.y1() - b.y0());
    return inter / (area_a + area_b - inter);
}

inline double cle(const BBox& a, const BBox& b) {
    require_valid(a, "cle");
    require_valid(b, "cle");
    return std::hypot(a.cx - b.cx, a.cy - b.cy);
}

// Placement of a square search crop within its frame.
struct SearchGeometry {
    int search_size = 0;       // resampled patch side, pixels
    double patch_h = 0;        // crop side in frame pixels
    double patch_w = 0;
    int frame_h = 0;
    int frame_w = 0;

    double area_fraction() const {
        if (frame_h <= 0 || frame_w <= 0) throw InvalidInput("SearchGeometry: zero-area frame");
        return (patch_h * patch_w) / (static_cast<double>(frame_h) * frame_w);
    }

    void validate() const {
        if (search_size <= 0) throw InvalidInput("SearchGeometry: search_size must be positive");
        if (!(patch_h > 0) || !(patch_w > 0) || patch_h > frame_h || patch_w > frame_w)
            throw InvalidInput("SearchGeometry: patch must fit inside the frame");
    }
};

// Context-padded crop side: side = cf * sqrt((w+p)(h+p)), p = (w+h)/2.
inline double context_side(const BBox& box, double context_factor) {
    require_valid(box, "context_side");
    const double p = (box.w + box.h) / 2;
    return context_factor * std::sqrt((box.w + p) * (box.h + p));
}

}  // namespace ad2
