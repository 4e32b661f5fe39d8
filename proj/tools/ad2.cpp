#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ad2/checkpoint.hpp"
#include "ad2/config.hpp"
#include "ad2/corpus.hpp"
#include "ad2/errors.hpp"
#include "ad2/evaluation.hpp"
#include "ad2/image_io.hpp"
#include "ad2/losses.hpp"
#include "ad2/synth.hpp"
#include "ad2/training.hpp"
#include "ad2/victim.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace ad2;

namespace {

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// defaults < config file < AD2_SEED < explicit --key value overrides
RunConfig build_config(const std::string& config_path, const std::vector<std::string>& extras) {
    RunConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    apply_env_overrides(cfg);
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& tok = extras[i];
        if (tok.rfind("--", 0) != 0 || tok.size() <= 2)
            throw ConfigError("expected --key value override, got '" + tok + "'");
        if (i + 1 >= extras.size()) throw ConfigError("override '" + tok + "' is missing a value");
        apply_config_kv(cfg, tok.substr(2), extras[++i]);
    }
    cfg.validate();
    return cfg;
}

void prepare_out_dir(const std::string& out, bool force) {
    if (out.empty()) throw ConfigError("--out is required");
    if (fs::exists(out) && !fs::is_directory(out)) throw ConfigError("--out exists and is not a directory: " + out);
    if (fs::is_directory(out) && !fs::is_empty(out) && !force)
        throw ConfigError("output directory not empty: " + out + " (use --force to overwrite)");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory: " + out);
}

void write_manifest(const std::string& out, const std::string& command, const RunConfig& cfg,
                    const ordered_json& args) {
    ordered_json j;
    j["command"] = command;
    j["timestamp"] = utc_now();
    j["seed"] = cfg.seed;
    j["output_dir"] = out;
    j["checkpoints"] = {{"victim", cfg.victim_checkpoint}, {"sru", cfg.sru_checkpoint}};
    j["args"] = args;
    ordered_json snap;
    for (const auto& k : config_keys()) snap[k] = config_get(cfg, k);
    j["config"] = snap;
    std::ofstream os(fs::path(out) / "manifest.json");
    if (!os) throw IoError("cannot write manifest in " + out);
    os << j.dump(2) << "\n";
}

std::string seq_name(const std::string& dir) { return fs::path(dir).filename().string(); }

int cmd_synth(const RunConfig& cfg, const std::string& out, bool force) {
    prepare_out_dir(out, force);
    write_manifest(out, "synth", cfg, ordered_json::object());
    write_synth_corpus(out, cfg.seed, cfg.synth_sequences, cfg.synth_frames, cfg.synth_width, cfg.synth_height);
    std::cout << "wrote " << cfg.synth_sequences << " sequences x " << cfg.synth_frames << " frames to " << out
              << "\n";
    return 0;
}

int cmd_train_victim(const RunConfig& cfg, const std::string& out, bool force) {
    if (cfg.train_data.empty()) throw ConfigError("train.data is required");
    prepare_out_dir(out, force);
    write_manifest(out, "train-victim", cfg, ordered_json::object());

    const auto dirs = list_sequence_dirs(cfg.train_data);
    std::cout << "training victim on " << dirs.size() << " sequences, up to 3 rounds of " << cfg.victim_steps
              << " steps\n";
    const VictimTrainResult r = train_victim(dirs, cfg);

    const std::string ckpt = (fs::path(out) / "victim.ckpt").string();
    save_victim(ckpt, r.tracker);
    {
        std::ofstream os(fs::path(out) / "victim_loss.jsonl");
        for (const auto& rec : r.history) os << victim_loss_record_line(rec) << "\n";
    }
    ordered_json s;
    s["steps"] = r.history.size();
    s["rounds"] = r.rounds;
    s["clean_mean_iou"] = r.gate_mean_iou;
    s["checkpoint"] = ckpt;
    std::ofstream os(fs::path(out) / "train_summary.json");
    os << s.dump(2) << "\n";
    std::cout << "clean mean IoU " << r.gate_mean_iou << " after " << r.rounds << " round(s); saved " << ckpt
              << "\n";
    return 0;
}

int cmd_train_attack(const RunConfig& cfg, const std::string& out, bool force) {
    if (cfg.train_data.empty()) throw ConfigError("train.data is required");
    if (cfg.victim_checkpoint.empty()) throw ConfigError("tracker.checkpoint is required");
    prepare_out_dir(out, force);
    write_manifest(out, "train-attack", cfg, ordered_json::object());

    const ToyTracker victim = load_victim(cfg.victim_checkpoint);
    const TrainingCorpus corpus = build_corpus(list_sequence_dirs(cfg.train_data), cfg.train_cadence);
    std::cout << "attack training: " << corpus.items.size() << " corpus items, " << cfg.train_steps
              << " steps, batch " << cfg.train_batch << "\n";

    Rng rng = Rng(cfg.seed).fork(0x73727569ULL);  // attack-init stream
    SruNetwork start = SruNetwork::init(cfg.pyramid, rng);

    std::ofstream hist(fs::path(out) / "loss_history.jsonl");
    if (!hist) throw IoError("cannot write loss history in " + out);
    int last_shown = -1;
    const AttackTrainResult r = train_attack(corpus, victim, start, cfg, (fs::path(out) / "diagnostics").string(),
                                             [&](const LossRecord& rec) {
                                                 hist << loss_record_line(rec) << "\n";
                                                 hist.flush();
                                                 if (rec.step / 100 > last_shown) {
                                                     last_shown = rec.step / 100;
                                                     std::cout << "step " << rec.step << " total " << rec.total
                                                               << " (score " << rec.score << " drift " << rec.drift
                                                               << " l2 " << rec.l2 << ")\n";
                                                 }
                                             });

    const std::string ckpt = (fs::path(out) / "sru.ckpt").string();
    save_sru(ckpt, r.net);
    ordered_json s;
    s["steps"] = r.history.size();
    s["best_step"] = r.best_step;
    s["best_loss"] = r.best_loss;
    s["checkpoint"] = ckpt;
    std::ofstream os(fs::path(out) / "train_summary.json");
    os << s.dump(2) << "\n";
    std::cout << "best loss " << r.best_loss << " at step " << r.best_step << "; saved " << ckpt << "\n";
    return 0;
}

std::vector<std::string> parse_modes(const std::string& csv) {
    std::vector<std::string> modes;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        const std::string m = canonical_mode(tok);
        if (std::find(modes.begin(), modes.end(), m) == modes.end()) modes.push_back(m);
    }
    if (modes.empty()) throw ConfigError("--modes is empty");
    return modes;
}

int cmd_eval(const RunConfig& cfg, const std::string& out, bool force, const std::string& modes_csv) {
    if (cfg.eval_data.empty()) throw ConfigError("eval.data is required");
    if (cfg.victim_checkpoint.empty()) throw ConfigError("tracker.checkpoint is required");
    std::vector<std::string> modes = parse_modes(modes_csv);
    const bool needs_sru = std::any_of(modes.begin(), modes.end(),
                                       [](const std::string& m) { return m == "attack" || m == "no-rse"; });
    if (needs_sru && cfg.sru_checkpoint.empty())
        throw ConfigError("sru.checkpoint is required for attack / no-rse modes");

    prepare_out_dir(out, force);
    write_manifest(out, "eval", cfg, ordered_json{{"modes", modes}});

    const ToyTracker tracker = load_victim(cfg.victim_checkpoint);
    SruNetwork sru;
    if (needs_sru) sru = load_sru(cfg.sru_checkpoint);

    const auto dirs = list_sequence_dirs(cfg.eval_data);
    std::vector<Sequence> seqs;
    seqs.reserve(dirs.size());
    for (const auto& d : dirs) seqs.push_back(load_sequence(d));
    std::cout << "evaluating " << seqs.size() << " sequences in modes:";
    for (const auto& m : modes) std::cout << " " << m;
    std::cout << "\n";

    std::vector<std::pair<std::string, MetricReport>> by_mode;
    for (const auto& mode : modes) {
        std::vector<TrackingRun> runs;
        runs.reserve(seqs.size());
        const fs::path run_dir = fs::path(out) / "runs" / mode;
        std::error_code ec;
        fs::create_directories(run_dir, ec);
        if (ec) throw IoError("cannot create " + run_dir.string());
        for (const auto& seq : seqs) {
            runs.push_back(run_sequence(tracker, seq, mode, needs_sru ? &sru : nullptr));
            write_run_report((run_dir / (seq_name(seq.dir) + ".json")).string(), runs.back());
        }
        const MetricReport rep = aggregate(runs);
        write_metric_report((fs::path(out) / ("metrics_" + mode + ".json")).string(), mode, rep);
        write_curves_csv((fs::path(out) / ("curves_" + mode + ".csv")).string(), rep);
        if (mode != "clean") write_timing_report((fs::path(out) / ("timing_" + mode + ".json")).string(), runs);
        by_mode.emplace_back(mode, rep);
    }

    const std::string table = format_comparison_table(by_mode);
    std::ofstream(fs::path(out) / "table.txt") << table;
    std::ofstream(fs::path(out) / "comparison.csv") << format_comparison_csv(by_mode);
    std::cout << table;
    return 0;
}

BBox parse_box(const std::string& csv) {
    double v[4];
    char extra;
    if (std::sscanf(csv.c_str(), "%lf,%lf,%lf,%lf%c", &v[0], &v[1], &v[2], &v[3], &extra) != 4)
        throw ConfigError("--box expects x,y,w,h (top-left corner), got '" + csv + "'");
    const BBox b = BBox::from_tl(v[0], v[1], v[2], v[3]);
    require_valid(b, "--box");
    return b;
}

int cmd_heatmap(const RunConfig& cfg, const std::string& out, bool force, const std::string& frame_path,
                const std::string& box_csv) {
    if (cfg.victim_checkpoint.empty()) throw ConfigError("tracker.checkpoint is required");
    if (cfg.sru_checkpoint.empty()) throw ConfigError("sru.checkpoint is required");
    if (frame_path.empty()) throw ConfigError("--frame is required");
    const BBox box = parse_box(box_csv);
    prepare_out_dir(out, force);
    write_manifest(out, "heatmap", cfg, ordered_json{{"frame", frame_path}, {"box", box_csv}});

    const ToyTracker tracker = load_victim(cfg.victim_checkpoint);
    const SruNetwork sru = load_sru(cfg.sru_checkpoint);
    const Image frame = load_image(frame_path);
    const TemplateFeat tmpl = tracker.init_template(frame, box);
    auto [patch, geom] = crop_search_patch(frame, box, tracker.vcfg.search_size, tracker.vcfg.context_search);
    const Image adv = attack_patch(patch, geom, sru, true);

    save_image((fs::path(out) / "patch_clean.png").string(), patch);
    save_image((fs::path(out) / "patch_attack.png").string(), adv);
    save_gray((fs::path(out) / "heatmap_clean.png").string(), heatmap(tracker, tmpl, patch));
    save_gray((fs::path(out) / "heatmap_attack.png").string(), heatmap(tracker, tmpl, adv));
    std::cout << "wrote clean/attack patches and saliency maps to " << out << "\n";
    return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& out, bool force) {
    if (cfg.sru_checkpoint.empty()) throw ConfigError("sru.checkpoint is required");
    prepare_out_dir(out, force);
    write_manifest(out, "bench", cfg, ordered_json::object());

    const SruNetwork sru = load_sru(cfg.sru_checkpoint);
    const SynthSequence seq =
        make_synth_sequence(cfg.seed, 0, cfg.synth_frames, cfg.synth_width, cfg.synth_height);

    std::vector<double> lat;
    lat.reserve(seq.frames.size());
    for (std::size_t f = 0; f < seq.frames.size(); ++f) {
        auto [patch, geom] =
            crop_search_patch(seq.frames[f], seq.boxes[f], cfg.tracker.search_size, cfg.tracker.context_search);
        const auto t0 = std::chrono::steady_clock::now();
        const Image adv = attack_patch(patch, geom, sru, true);
        const auto t1 = std::chrono::steady_clock::now();
        (void)adv;
        lat.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }

    std::vector<double> sorted = lat;
    std::sort(sorted.begin(), sorted.end());
    auto pick = [&](double q) { return sorted[std::min(sorted.size() - 1, static_cast<std::size_t>(q * sorted.size()))]; };
    double mean = 0;
    for (double v : lat) mean += v;
    mean /= static_cast<double>(lat.size());

    ordered_json j;
    j["frames"] = lat.size();
    j["mean_ms"] = mean;
    j["median_ms"] = pick(0.5);
    j["p90_ms"] = pick(0.9);
    j["min_ms"] = sorted.front();
    j["max_ms"] = sorted.back();
    j["fps"] = mean > 0 ? 1000.0 / mean : 0.0;
    j["latency_ms"] = lat;
    std::ofstream os(fs::path(out) / "bench.json");
    os << j.dump(2) << "\n";
    std::cout << "attack transform: mean " << mean << " ms, median " << pick(0.5) << " ms, " << (1000.0 / mean)
              << " fps over " << lat.size() << " frames\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"resampling-based adversarial attack laboratory for siamese trackers"};
    app.require_subcommand(1);

    std::string config_path, out, modes_csv = "clean,down-up,no-rse,attack";
    std::string frame_path, box_csv;
    bool force = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key = value config file");
        sub->add_option("--out", out, "output directory")->required();
        sub->add_flag("--force", force, "write into a non-empty output directory");
        sub->allow_extras();
        return sub;
    };

    auto* synth = add_common(app.add_subcommand("synth", "generate a synthetic tracking corpus"));
    auto* train_victim_cmd = add_common(app.add_subcommand("train-victim", "pretrain the toy tracker"));
    auto* train_attack_cmd = add_common(app.add_subcommand("train-attack", "train the resampling attack network"));
    auto* eval_cmd = add_common(app.add_subcommand("eval", "one-pass evaluation across modes"));
    eval_cmd->add_option("--modes", modes_csv, "comma list of clean,down-up,no-rse,attack");
    auto* heatmap_cmd = add_common(app.add_subcommand("heatmap", "clean vs attacked saliency maps"));
    heatmap_cmd->add_option("--frame", frame_path, "input frame image")->required();
    heatmap_cmd->add_option("--box", box_csv, "target box as x,y,w,h")->required();
    auto* bench_cmd = add_common(app.add_subcommand("bench", "attack transform latency and fps"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        const RunConfig cfg = build_config(config_path, sub->remaining());
        if (sub == synth) return cmd_synth(cfg, out, force);
        if (sub == train_victim_cmd) return cmd_train_victim(cfg, out, force);
        if (sub == train_attack_cmd) return cmd_train_attack(cfg, out, force);
        if (sub == eval_cmd) return cmd_eval(cfg, out, force, modes_csv);
        if (sub == heatmap_cmd) return cmd_heatmap(cfg, out, force, frame_path, box_csv);
        if (sub == bench_cmd) return cmd_bench(cfg, out, force);
        throw ConfigError("unknown subcommand");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 3;
    } catch (const InvariantError& e) {
        std::cerr << "invariant violation: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
