#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ad2/corpus.hpp"
#include "ad2/geometry.hpp"
#include "ad2/resample_attack.hpp"
#include "ad2/victim.hpp"

namespace ad2 {

inline constexpr const char* kRunTag = "ad2attack-run/1";

// Modes: clean, down-up (bilinear baseline), no-rse (trained net with the
// enhancement block bypassed), attack (full pipeline). "attacked" is accepted
// as an alias of "attack".
std::string canonical_mode(const std::string& mode);

struct TrackingRun {
    std::string sequence_id;
    std::string mode;
    std::vector<BBox> boxes;
    std::vector<double> iou_series;
    std::vector<double> cle_series;
    std::vector<double> attack_latency_ms;  // one entry per attacked frame; empty in clean mode
    bool partial = false;                   // a frame failed to decode; series truncated
};

struct MetricReport {
    double precision_at_20 = 0;
    double success_auc = 0;
    std::vector<double> precision_curve;  // CLE thresholds 0..50 step 1
    std::vector<double> success_curve;    // IoU thresholds 0..1 step 0.05, strict >
    std::size_t frames = 0;
};

// (att - org) / org * 100; 0 when both are 0, NaN when only org is.
double delta_pct(double att, double org);

// The bilinear down-then-up resampling with no learned residuals.
Image down_up_baseline(const Image& patch, const SearchGeometry& geom, int levels_cap = kMaxPyramidLevels);

// One-pass evaluation: initialize from ground truth, track frame by frame,
// transforming the search patch according to mode.
TrackingRun run_sequence(const TrackerAdapter& tracker, const Sequence& seq, const std::string& mode,
                         const SruNetwork* sru = nullptr);

MetricReport aggregate(const std::vector<TrackingRun>& runs);

// Org./Att./delta tables over per-mode reports (clean is the baseline).
std::string format_comparison_table(const std::vector<std::pair<std::string, MetricReport>>& by_mode);
std::string format_comparison_csv(const std::vector<std::pair<std::string, MetricReport>>& by_mode);

// Deterministic per-run record (no timing inside; latency goes separately).
void write_run_report(const std::string& path, const TrackingRun& run);
void write_metric_report(const std::string& path, const std::string& mode, const MetricReport& report);
void write_curves_csv(const std::string& path, const MetricReport& report);
void write_timing_report(const std::string& path, const std::vector<TrackingRun>& runs);

}  // namespace ad2
