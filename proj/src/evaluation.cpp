#include "ad2/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "ad2/image_io.hpp"

namespace ad2 {

using nlohmann::ordered_json;

std::string canonical_mode(const std::string& mode) {
    if (mode == "clean" || mode == "down-up" || mode == "no-rse" || mode == "attack") return mode;
    if (mode == "attacked") return "attack";
    throw ConfigError("unknown mode '" + mode + "' (expected clean, down-up, no-rse, attack)");
}

double delta_pct(double att, double org) {
    if (org == 0.0) return att == 0.0 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
    return (att - org) / org * 100.0;
}

Image down_up_baseline(const Image& patch, const SearchGeometry& geom, int levels_cap) {
    const int levels = std::min(adaptive_pyramid_levels(geom), levels_cap);
    auto [aligned, recipe] = align_for_pyramid(patch, levels);
    Image img = did_downsample(aligned, levels);
    for (int lv = 0; lv < levels; ++lv) img = resize_bilinear(img, img.h() * 2, img.w() * 2);
    clamp01_inplace(img);
    return restore(recipe, img);
}

namespace {

// Keeps the tracker state usable: center inside the frame, context crop no
// larger than the frame.
BBox clamp_for_next_crop(BBox b, int frame_h, int frame_w, double context_factor) {
    b.cx = std::clamp(b.cx, 0.0, frame_w - 1.0);
    b.cy = std::clamp(b.cy, 0.0, frame_h - 1.0);
    b.w = std::max(b.w, 4.0);
    b.h = std::max(b.h, 4.0);
    const double side = context_side(b, context_factor);
    const double max_side = std::min(frame_h, frame_w);
    if (side > max_side) {
        const double k = max_side / side;
        b.w *= k;
        b.h *= k;
    }
    return b;
}

}  // namespace

TrackingRun run_sequence(const TrackerAdapter& tracker, const Sequence& seq, const std::string& mode,
                         const SruNetwork* sru) {
    TrackingRun run;
    run.sequence_id = seq.dir;
    run.mode = canonical_mode(mode);
    if ((run.mode == "attack" || run.mode == "no-rse") && !sru)
        throw ConfigError("mode '" + run.mode + "' needs a trained network");
    if (seq.size() == 0) throw InvalidInput("run_sequence: empty sequence");

    const Image first = load_image(seq.frame_paths[0]);
    const BBox init = seq.boxes[0];
    const TemplateFeat tmpl = tracker.init_template(first, init);

    run.boxes.push_back(init);
    run.iou_series.push_back(1.0);
    run.cle_series.push_back(0.0);

    BBox prev = clamp_for_next_crop(init, first.h(), first.w(), tracker.search_context());
    for (std::size_t f = 1; f < seq.size(); ++f) {
        Image frame;
        try {
            frame = load_image(seq.frame_paths[f]);
        } catch (const IoError&) {
            run.partial = true;
            break;
        }
        auto [patch, geom] = crop_search_patch(frame, prev, tracker.search_size(), tracker.search_context());

        if (run.mode != "clean") {
            const auto t0 = std::chrono::steady_clock::now();
            if (run.mode == "down-up") {
                patch = down_up_baseline(patch, geom, sru ? sru->cfg.levels : kMaxPyramidLevels);
            } else {
                patch = attack_patch(patch, geom, *sru, run.mode == "attack");
            }
            const auto t1 = std::chrono::steady_clock::now();
            run.attack_latency_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }

        const TrackerOutput out = tracker.track_step(tmpl, patch, geom, prev);
        run.boxes.push_back(out.predicted_box);
        run.iou_series.push_back(iou(out.predicted_box, seq.boxes[f]));
        run.cle_series.push_back(cle(out.predicted_box, seq.boxes[f]));
        prev = clamp_for_next_crop(out.predicted_box, frame.h(), frame.w(), tracker.search_context());
    }
    return run;
}

MetricReport aggregate(const std::vector<TrackingRun>& runs) {
    if (runs.empty()) throw InvalidInput("aggregate: no runs");
    MetricReport r;
    std::vector<double> ious, cles;
    for (const auto& run : runs) {
        if (run.iou_series.size() != run.boxes.size() || run.cle_series.size() != run.boxes.size())
            throw InvariantError("aggregate: series lengths disagree with frame count");
        ious.insert(ious.end(), run.iou_series.begin(), run.iou_series.end());
        cles.insert(cles.end(), run.cle_series.begin(), run.cle_series.end());
    }
    r.frames = ious.size();
    const double n = static_cast<double>(ious.size());

    r.precision_curve.resize(51);
    for (int t = 0; t <= 50; ++t) {
        std::size_t hit = 0;
        for (double c : cles)
            if (c <= t) ++hit;
        r.precision_curve[static_cast<std::size_t>(t)] = hit / n;
    }
    r.precision_at_20 = r.precision_curve[20];

    r.success_curve.resize(21);
    double auc = 0;
    for (int i = 0; i <= 20; ++i) {
        const double thr = i * 0.05;
        std::size_t hit = 0;
        for (double v : ious)
            if (v > thr) ++hit;
        r.success_curve[static_cast<std::size_t>(i)] = hit / n;
        auc += r.success_curve[static_cast<std::size_t>(i)];
    }
    r.success_auc = auc / 21.0;
    return r;
}

namespace {

const MetricReport* find_clean(const std::vector<std::pair<std::string, MetricReport>>& by_mode) {
    for (const auto& [mode, rep] : by_mode)
        if (mode == "clean") return &rep;
    return nullptr;
}

std::string fmt_delta(double d) {
    if (std::isnan(d)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", d);
    return buf;
}

}  // namespace

std::string format_comparison_table(const std::vector<std::pair<std::string, MetricReport>>& by_mode) {
    const MetricReport* clean = find_clean(by_mode);
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-10s %14s %14s %10s %14s %10s\n", "mode", "precision@20", "prec. delta",
                  "", "success AUC", "AUC delta");
    out += buf;
    for (const auto& [mode, rep] : by_mode) {
        std::string dp = "-", ds = "-";
        if (clean && mode != "clean") {
            dp = fmt_delta(delta_pct(rep.precision_at_20, clean->precision_at_20));
            ds = fmt_delta(delta_pct(rep.success_auc, clean->success_auc));
        }
        std::snprintf(buf, sizeof(buf), "%-10s %14.4f %14s %10s %14.4f %10s\n", mode.c_str(), rep.precision_at_20,
                      dp.c_str(), "", rep.success_auc, ds.c_str());
        out += buf;
    }
    return out;
}

std::string format_comparison_csv(const std::vector<std::pair<std::string, MetricReport>>& by_mode) {
    const MetricReport* clean = find_clean(by_mode);
    std::string out = "mode,precision_at_20,precision_delta_pct,success_auc,success_delta_pct,frames\n";
    char buf[200];
    for (const auto& [mode, rep] : by_mode) {
        std::string dp, ds;
        if (clean && mode != "clean") {
            const double d1 = delta_pct(rep.precision_at_20, clean->precision_at_20);
            const double d2 = delta_pct(rep.success_auc, clean->success_auc);
            std::snprintf(buf, sizeof(buf), "%.6f", d1);
            dp = std::isnan(d1) ? "nan" : buf;
            std::snprintf(buf, sizeof(buf), "%.6f", d2);
            ds = std::isnan(d2) ? "nan" : buf;
        }
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%s,%.6f,%s,%zu\n", mode.c_str(), rep.precision_at_20, dp.c_str(),
                      rep.success_auc, ds.c_str(), rep.frames);
        out += buf;
    }
    return out;
}

namespace {

ordered_json box_json(const BBox& b) {
    return ordered_json{{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}};
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << content;
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace

void write_run_report(const std::string& path, const TrackingRun& run) {
    ordered_json j;
    j["format"] = kRunTag;
    j["sequence"] = run.sequence_id;
    j["mode"] = run.mode;
    j["partial"] = run.partial;
    j["boxes"] = ordered_json::array();
    for (const auto& b : run.boxes) j["boxes"].push_back(box_json(b));
    j["iou_series"] = run.iou_series;
    j["cle_series"] = run.cle_series;
    write_text(path, j.dump(2) + "\n");
}

void write_metric_report(const std::string& path, const std::string& mode, const MetricReport& report) {
    ordered_json j;
    j["format"] = kRunTag;
    j["mode"] = mode;
    j["frames"] = report.frames;
    j["precision_at_20"] = report.precision_at_20;
    j["success_auc"] = report.success_auc;
    j["precision_curve"] = report.precision_curve;
    j["success_curve"] = report.success_curve;
    write_text(path, j.dump(2) + "\n");
}

void write_curves_csv(const std::string& path, const MetricReport& report) {
    std::string out = "curve,threshold,value\n";
    char buf[96];
    for (std::size_t i = 0; i < report.precision_curve.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "precision,%zu,%.6f\n", i, report.precision_curve[i]);
        out += buf;
    }
    for (std::size_t i = 0; i < report.success_curve.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "success,%.2f,%.6f\n", i * 0.05, report.success_curve[i]);
        out += buf;
    }
    write_text(path, out);
}

void write_timing_report(const std::string& path, const std::vector<TrackingRun>& runs) {
    ordered_json j;
    j["runs"] = ordered_json::array();
    double total_ms = 0;
    std::size_t frames = 0;
    for (const auto& run : runs) {
        double s = 0;
        for (double v : run.attack_latency_ms) s += v;
        total_ms += s;
        frames += run.attack_latency_ms.size();
        ordered_json r;
        r["sequence"] = run.sequence_id;
        r["mode"] = run.mode;
        r["attack_latency_ms"] = run.attack_latency_ms;
        r["mean_ms"] = run.attack_latency_ms.empty() ? 0.0 : s / run.attack_latency_ms.size();
        j["runs"].push_back(r);
    }
    j["attacked_frames"] = frames;
    j["mean_attack_ms"] = frames ? total_ms / frames : 0.0;
    j["attack_fps"] = total_ms > 0 ? 1000.0 * frames / total_ms : 0.0;
    write_text(path, j.dump(2) + "\n");
}

}  // namespace ad2
