#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ad2/losses.hpp"
#include "ad2/resample_attack.hpp"
#include "ad2/victim.hpp"

namespace ad2 {

// Flat run configuration. Every field is addressable as a dotted key in the
// config file and as a --key value command-line override.
struct RunConfig {
    PyramidConfig pyramid;
    AttackConfig attack;
    VictimConfig tracker;

    std::string tracker_name = "toy";
    std::string victim_checkpoint;
    std::string sru_checkpoint;

    double train_lr = 2e-4;
    int train_steps = 2000;
    int train_batch = 8;
    int train_cadence = 10;
    std::string train_data;

    double victim_lr = 1e-3;
    int victim_steps = 600;
    int victim_batch = 8;
    double victim_iou_gate = 0.6;

    int synth_sequences = 10;
    int synth_frames = 60;
    int synth_width = 320;
    int synth_height = 240;

    std::string eval_data;

    std::uint64_t seed = 42;
    int workers = 1;

    void validate() const;
};

// key=value lines, '#' comments. Unknown keys are hard errors.
void apply_config_file(RunConfig& cfg, const std::string& path);
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// AD2_SEED environment override (applied between file and CLI overrides).
void apply_env_overrides(RunConfig& cfg);

std::vector<std::string> config_keys();
std::string config_get(const RunConfig& cfg, const std::string& key);

}  // namespace ad2
