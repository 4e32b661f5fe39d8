#include "ad2/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace ad2 {
namespace {

struct Key {
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

Errata parse_errata(const std::string& key, const std::string& v) {
    if (v == "intent-corrected") return Errata::IntentCorrected;
    if (v == "paper-literal") return Errata::PaperLiteral;
    throw ConfigError("config key '" + key + "': expected intent-corrected or paper-literal, got '" + v + "'");
}

std::string errata_str(Errata e) { return e == Errata::IntentCorrected ? "intent-corrected" : "paper-literal"; }

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

const std::vector<Key>& keys() {
#define INT_KEY(name, field)                                                             \
    Key { name, [](RunConfig& c, const std::string& v) { c.field = parse_int(name, v); }, \
          [](const RunConfig& c) { return std::to_string(c.field); } }
#define DBL_KEY(name, field)                                                                \
    Key { name, [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); }, \
          [](const RunConfig& c) { return fmt(c.field); } }
#define STR_KEY(name, field)                                                  \
    Key { name, [](RunConfig& c, const std::string& v) { c.field = v; },       \
          [](const RunConfig& c) { return c.field; } }
#define ERR_KEY(name, field)                                                                 \
    Key { name, [](RunConfig& c, const std::string& v) { c.field = parse_errata(name, v); }, \
          [](const RunConfig& c) { return errata_str(c.field); } }

    static const std::vector<Key> k = {
        INT_KEY("pyramid.levels", pyramid.levels),
        INT_KEY("pyramid.convs_per_block", pyramid.convs_per_block),
        INT_KEY("pyramid.feature_channels", pyramid.feature_channels),
        INT_KEY("pyramid.group_count", pyramid.group_count),
        INT_KEY("pyramid.att_kernel", pyramid.att_kernel),
        DBL_KEY("attack.epsilon", attack.epsilon),
        DBL_KEY("attack.phi", attack.phi),
        DBL_KEY("attack.alpha", attack.alpha),
        DBL_KEY("attack.beta", attack.beta),
        DBL_KEY("attack.gamma", attack.gamma),
        DBL_KEY("attack.tau_b", attack.tau_b),
        DBL_KEY("attack.tau_c", attack.tau_c),
        ERR_KEY("attack.background_sign", attack.background_sign),
        ERR_KEY("attack.mask_rule", attack.mask_rule),
        STR_KEY("tracker.name", tracker_name),
        INT_KEY("tracker.search_size", tracker.search_size),
        INT_KEY("tracker.template_size", tracker.template_size),
        DBL_KEY("tracker.context_search", tracker.context_search),
        DBL_KEY("tracker.context_template", tracker.context_template),
        STR_KEY("tracker.checkpoint", victim_checkpoint),
        STR_KEY("sru.checkpoint", sru_checkpoint),
        DBL_KEY("train.lr", train_lr),
        INT_KEY("train.steps", train_steps),
        INT_KEY("train.batch", train_batch),
        INT_KEY("train.cadence", train_cadence),
        STR_KEY("train.data", train_data),
        DBL_KEY("victim.lr", victim_lr),
        INT_KEY("victim.steps", victim_steps),
        INT_KEY("victim.batch", victim_batch),
        DBL_KEY("victim.iou_gate", victim_iou_gate),
        INT_KEY("synth.sequences", synth_sequences),
        INT_KEY("synth.frames", synth_frames),
        INT_KEY("synth.width", synth_width),
        INT_KEY("synth.height", synth_height),
        STR_KEY("eval.data", eval_data),
        Key{"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
        INT_KEY("workers", workers),
    };
#undef INT_KEY
#undef DBL_KEY
#undef STR_KEY
#undef ERR_KEY
    return k;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::validate() const {
    pyramid.validate();
    attack.validate();
    tracker.validate();
    if (train_lr <= 0 || victim_lr <= 0) throw ConfigError("learning rates must be positive");
    if (train_steps < 0 || victim_steps < 0) throw ConfigError("step counts must be >= 0");
    if (train_batch < 1 || victim_batch < 1) throw ConfigError("batch sizes must be >= 1");
    if (train_cadence < 1) throw ConfigError("train.cadence must be >= 1");
    if (!(victim_iou_gate > 0) || victim_iou_gate > 1) throw ConfigError("victim.iou_gate must be in (0,1]");
    if (synth_sequences < 1 || synth_frames < 2) throw ConfigError("synth corpus needs >= 1 sequence of >= 2 frames");
    if (synth_width < 64 || synth_height < 64) throw ConfigError("synth frames must be at least 64x64");
    if (workers < 1) throw ConfigError("workers must be >= 1");
}

void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : keys()) {
        if (key == k.name) {
            k.set(cfg, value);
            return;
        }
    }
    throw ConfigError("unknown config key: '" + key + "'");
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void apply_env_overrides(RunConfig& cfg) {
    if (const char* s = std::getenv("AD2_SEED")) cfg.seed = parse_u64("AD2_SEED", s);
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& k : keys()) out.push_back(k.name);
    return out;
}

std::string config_get(const RunConfig& cfg, const std::string& key) {
    for (const auto& k : keys()) {
        if (key == k.name) return k.get(cfg);
    }
    throw ConfigError("unknown config key: '" + key + "'");
}

}  // namespace ad2
