#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ad2/config.hpp"
#include "ad2/corpus.hpp"
#include "ad2/losses.hpp"
#include "ad2/resample_attack.hpp"
#include "ad2/victim.hpp"

namespace ad2 {

// Adam with bias correction; moments follow the store's parameter order.
class Adam {
public:
    Adam(const ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(ParamStore& store, const std::vector<Tensor<float>>& grads);
    int steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Tensor<float>> m_, v_;
};

struct LossRecord {
    int step = 0;
    double score = 0, drift = 0, l2 = 0, total = 0;
};

struct AttackTrainResult {
    SruNetwork net;  // best-total-loss checkpoint
    std::vector<LossRecord> history;
    int best_step = -1;
    double best_loss = 0;
};

// Trains the upsampling network against the frozen victim: per step, crop a
// clean search patch, take the clean maps and masks, build the attacked
// patch, and descend the combined objective on the network parameters only.
AttackTrainResult train_attack(const TrainingCorpus& corpus, const ToyTracker& victim, const SruNetwork& start,
                               const RunConfig& cfg, const std::string& dump_dir = "",
                               const std::function<void(const LossRecord&)>& on_record = {});

struct VictimLossRecord {
    int step = 0;
    double cls = 0, reg = 0, total = 0;
};

struct VictimTrainResult {
    ToyTracker tracker;
    std::vector<VictimLossRecord> history;
    double gate_mean_iou = 0;
    int rounds = 0;
};

// Pretrains the toy victim on clean sequences (balanced cross-entropy on the
// score map, smooth-L1 on the regression map) until it holds the configured
// mean-IoU gate on those sequences; gives up after three rounds.
VictimTrainResult train_victim(const std::vector<std::string>& sequence_dirs, const RunConfig& cfg);

// JSONL loss-history lines (deterministic formatting, byte-stable per build).
std::string loss_record_line(const LossRecord& r);
std::string victim_loss_record_line(const VictimLossRecord& r);

}  // namespace ad2
