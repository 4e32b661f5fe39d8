#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ad2/image_io.hpp"
#include "ad2/synth.hpp"
#include "ad2/training.hpp"

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

// One small on-disk corpus shared by every case in this binary.
struct CorpusFixture {
    TempDir tmp{"ad2-train-corpus"};
    std::vector<std::string> dirs;
    CorpusFixture() {
        write_synth_corpus(tmp.path.string(), 77, 2, 12, 120, 120);
        dirs = list_sequence_dirs(tmp.path.string());
    }
};

const CorpusFixture& fixture() {
    static CorpusFixture f;
    return f;
}

RunConfig small_cfg() {
    RunConfig cfg;
    cfg.tracker = VictimConfig{64, 32, 2.0, 1.0};
    cfg.pyramid = PyramidConfig{2, 1, 8, 2, 3};
    cfg.train_steps = 3;
    cfg.train_batch = 2;
    cfg.train_cadence = 4;
    cfg.victim_steps = 15;
    cfg.victim_batch = 4;
    cfg.victim_iou_gate = 0.01;
    cfg.workers = 1;
    cfg.seed = 5;
    return cfg;
}

ToyTracker make_victim(const RunConfig& cfg) {
    Rng rng(cfg.seed);
    Rng init = rng.fork(0x76696374ULL);
    return ToyTracker::init(cfg.tracker, init);
}

SruNetwork make_sru(const RunConfig& cfg) {
    Rng rng(cfg.seed);
    Rng init = rng.fork(0x73727569ULL);
    return SruNetwork::init(cfg.pyramid, init);
}

void check_params_equal(const ParamStore& a, const ParamStore& b) {
    REQUIRE(a.count() == b.count());
    for (std::size_t i = 0; i < a.count(); ++i) {
        CHECK(a.name(i) == b.name(i));
        const auto& ta = a.tensor(i);
        const auto& tb = b.tensor(i);
        REQUIRE(ta.same_shape(tb));
        for (std::size_t k = 0; k < ta.size(); ++k) REQUIRE(ta[k] == tb[k]);
    }
    CHECK(param_hash(a) == param_hash(b));
}

}  // namespace

TEST_CASE("corpus sampling follows the cadence") {
    const auto& fx = fixture();
    TrainingCorpus c4 = build_corpus(fx.dirs, 4);
    REQUIRE(c4.items.size() == 6);
    CHECK(c4.cadence == 4);
    for (int s = 0; s < 2; ++s)
        for (int k = 0; k < 3; ++k) {
            const CorpusItem& item = c4.items[static_cast<std::size_t>(s * 3 + k)];
            CHECK(item.sequence_dir == fx.dirs[static_cast<std::size_t>(s)]);
            CHECK(item.frame_index == 4 * k);
            CHECK(item.template_path.find("000000.png") != std::string::npos);
        }

    TrainingCorpus c1 = build_corpus(fx.dirs, 1);
    CHECK(c1.items.size() == 24);
    for (std::size_t i = 0; i < 12; ++i) CHECK(c1.items[i].frame_index == static_cast<int>(i));

    // The first item of each sequence pairs frame 0 with itself.
    CHECK(c1.items[0].search_path == c1.items[0].template_path);
    CHECK(c1.items[0].search_box.cx == c1.items[0].template_box.cx);
}

TEST_CASE("duplicated sequence directories double the corpus deterministically") {
    const auto& fx = fixture();
    std::vector<std::string> twice{fx.dirs[0], fx.dirs[0]};
    TrainingCorpus c = build_corpus(twice, 4);
    REQUIRE(c.items.size() == 6);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(c.items[i].search_path == c.items[i + 3].search_path);
        CHECK(c.items[i].frame_index == c.items[i + 3].frame_index);
        CHECK(c.items[i].search_box.cx == c.items[i + 3].search_box.cx);
    }
    CHECK_THROWS_AS(build_corpus(fx.dirs, 0), ConfigError);
    CHECK_THROWS_AS(build_corpus({}, 4), ConfigError);
}

TEST_CASE("sequence loader validates on-disk structure") {
    TempDir tmp("ad2-train-badseq");
    namespace fs = std::filesystem;
    const fs::path seq = tmp.path / "broken";
    fs::create_directories(seq / "frames");
    for (int i = 0; i < 2; ++i) {
        std::ofstream os(seq / "frames" / ("00000" + std::to_string(i) + ".png"));
        os << "not-a-real-png";
    }
    CHECK_THROWS_AS(load_sequence(seq.string()), IoError);  // no groundtruth.txt yet

    {
        std::ofstream gt(seq / "groundtruth.txt");
        gt << "1.0,2.0,10.0,10.0\n";
    }
    CHECK_THROWS_AS(load_sequence(seq.string()), InvariantError);  // 2 frames, 1 line

    {
        std::ofstream gt(seq / "groundtruth.txt");
        gt << "1.0,2.0,10.0,10.0\n1.0,2.0,0.0,10.0\n";
    }
    CHECK_THROWS_AS(load_sequence(seq.string()), InvariantError);  // zero-width box

    {
        std::ofstream gt(seq / "groundtruth.txt");
        gt << "1.0,2.0,10.0,10.0\n3.0,4.0,10.0,10.0\n";
    }
    Sequence ok = load_sequence(seq.string());
    CHECK(ok.size() == 2);
    CHECK(ok.boxes[1].cx == doctest::Approx(8.0));

    CHECK(list_sequence_dirs(seq.string()) == std::vector<std::string>{seq.string()});
    const auto sub = list_sequence_dirs(tmp.path.string());
    REQUIRE(sub.size() == 1);
    CHECK(sub[0] == seq.string());
    const fs::path empty_root = tmp.path / "nothing";
    fs::create_directories(empty_root);
    CHECK_THROWS_AS(list_sequence_dirs(empty_root.string()), ConfigError);
    CHECK_THROWS_AS(list_sequence_dirs((tmp.path / "missing").string()), IoError);
}

TEST_CASE("adam matches the hand-computed update") {
    ParamStore store;
    store.add("theta", Tensor<float>::scalar(1.0f));
    Adam opt(store, 0.1);
    std::vector<Tensor<float>> grads{Tensor<float>::scalar(0.5f)};

    // Constant gradients make the bias-corrected update step lr * sign(g).
    opt.step(store, grads);
    CHECK(store.tensor(0)[0] == doctest::Approx(0.9).epsilon(1e-6));
    opt.step(store, grads);
    CHECK(store.tensor(0)[0] == doctest::Approx(0.8).epsilon(1e-6));
    CHECK(opt.steps_taken() == 2);

    std::vector<Tensor<float>> wrong_count;
    CHECK_THROWS_AS(opt.step(store, wrong_count), InvariantError);
    std::vector<Tensor<float>> wrong_shape{Tensor<float>(2, 2, 1)};
    CHECK_THROWS_AS(opt.step(store, wrong_shape), InvariantError);
}

TEST_CASE("zero training steps return the starting network unchanged") {
    const auto& fx = fixture();
    RunConfig cfg = small_cfg();
    cfg.train_steps = 0;
    const TrainingCorpus corpus = build_corpus(fx.dirs, cfg.train_cadence);
    const ToyTracker victim = make_victim(cfg);
    const SruNetwork start = make_sru(cfg);

    AttackTrainResult r = train_attack(corpus, victim, start, cfg);
    CHECK(r.history.empty());
    CHECK(r.best_step == -1);
    check_params_equal(r.net.params, start.params);
}

TEST_CASE("attack training rejects an empty corpus") {
    RunConfig cfg = small_cfg();
    const ToyTracker victim = make_victim(cfg);
    const SruNetwork start = make_sru(cfg);
    TrainingCorpus empty;
    CHECK_THROWS_AS(train_attack(empty, victim, start, cfg), ConfigError);
}

TEST_CASE("fixed seed reproduces attack training bitwise") {
    const auto& fx = fixture();
    const RunConfig cfg = small_cfg();
    const TrainingCorpus corpus = build_corpus(fx.dirs, cfg.train_cadence);
    const ToyTracker victim = make_victim(cfg);
    const SruNetwork start = make_sru(cfg);
    const std::uint64_t victim_hash = param_hash(victim.params);

    AttackTrainResult a = train_attack(corpus, victim, start, cfg);
    AttackTrainResult b = train_attack(corpus, victim, start, cfg);

    REQUIRE(a.history.size() == 3);
    REQUIRE(b.history.size() == 3);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(loss_record_line(a.history[i]) == loss_record_line(b.history[i]));
        CHECK(a.history[i].total == b.history[i].total);
        CHECK(a.history[i].score == b.history[i].score);
    }
    CHECK(a.best_step == b.best_step);
    CHECK(a.best_loss == b.best_loss);
    check_params_equal(a.net.params, b.net.params);

    // The frozen victim is untouched, and training actually moved the network.
    CHECK(param_hash(victim.params) == victim_hash);
    CHECK(param_hash(a.net.params) != param_hash(start.params));
}

TEST_CASE("best checkpoint tracks the running minimum of the history") {
    const auto& fx = fixture();
    RunConfig cfg = small_cfg();
    cfg.train_steps = 5;
    const TrainingCorpus corpus = build_corpus(fx.dirs, cfg.train_cadence);
    const ToyTracker victim = make_victim(cfg);
    const SruNetwork start = make_sru(cfg);

    std::vector<LossRecord> seen;
    AttackTrainResult r = train_attack(corpus, victim, start, cfg, "",
                                       [&](const LossRecord& rec) { seen.push_back(rec); });

    REQUIRE(r.history.size() == 5);
    double best = r.history[0].total;
    int best_step = 0;
    for (const auto& rec : r.history)
        if (rec.total < best) {
            best = rec.total;
            best_step = rec.step;
        }
    CHECK(r.best_loss == best);
    CHECK(r.best_step == best_step);

    REQUIRE(seen.size() == r.history.size());
    for (std::size_t i = 0; i < seen.size(); ++i) {
        CHECK(seen[i].step == static_cast<int>(i));
        CHECK(loss_record_line(seen[i]) == loss_record_line(r.history[i]));
        CHECK(r.history[i].total ==
              doctest::Approx(r.history[i].score + r.history[i].drift + r.history[i].l2).epsilon(1e-5));
    }
}

TEST_CASE("non-finite losses abort with a diagnostic dump") {
    const auto& fx = fixture();
    TempDir dump("ad2-train-dump");
    RunConfig cfg = small_cfg();
    // The attacked patch itself is clamped, so overflow the objective instead.
    cfg.attack.gamma = std::numeric_limits<double>::infinity();
    const TrainingCorpus corpus = build_corpus(fx.dirs, cfg.train_cadence);
    const ToyTracker victim = make_victim(cfg);
    const SruNetwork start = make_sru(cfg);

    CHECK_THROWS_AS(train_attack(corpus, victim, start, cfg, dump.path.string()), InvariantError);
    CHECK(std::filesystem::is_regular_file(dump.path / "nonfinite_batch.json"));
}

TEST_CASE("loss record lines are byte-stable") {
    LossRecord r;
    r.step = 3;
    r.score = 0.5;
    r.drift = -1.25;
    r.l2 = 2.0;
    r.total = 1.25;
    CHECK(loss_record_line(r) == "{\"step\":3,\"score\":0.5,\"drift\":-1.25,\"l2\":2,\"total\":1.25}");

    VictimLossRecord v;
    v.step = 12;
    v.cls = 0.03125;
    v.reg = 0.125;
    v.total = 0.15625;
    CHECK(victim_loss_record_line(v) == "{\"step\":12,\"cls\":0.03125,\"reg\":0.125,\"total\":0.15625}");
}

TEST_CASE("raising the perceptibility weight shrinks the perturbation") {
    const auto& fx = fixture();
    RunConfig lo = small_cfg();
    lo.train_steps = 40;
    RunConfig hi = lo;
    hi.attack.gamma = 1e6;

    const TrainingCorpus corpus = build_corpus(fx.dirs, lo.train_cadence);
    const ToyTracker victim = make_victim(lo);
    const SruNetwork start = make_sru(lo);

    AttackTrainResult r_lo = train_attack(corpus, victim, start, lo);
    AttackTrainResult r_hi = train_attack(corpus, victim, start, hi);

    // Mean absolute pixel change of the attacked patch, averaged over items.
    auto mean_abs = [&](const SruNetwork& net) {
        double sum = 0;
        std::size_t n = 0;
        for (const auto& item : corpus.items) {
            const Image frame = load_image(item.search_path);
            auto [patch, geom] =
                crop_search_patch(frame, item.search_box, victim.vcfg.search_size, victim.vcfg.context_search);
            const Image adv = attack_patch(patch, geom, net, true);
            for (std::size_t i = 0; i < patch.size(); ++i) sum += std::abs(adv[i] - patch[i]);
            n += patch.size();
        }
        return sum / static_cast<double>(n);
    };
    CHECK(mean_abs(r_hi.net) < mean_abs(r_lo.net));
}

TEST_CASE("victim pretraining reaches its gate deterministically") {
    const auto& fx = fixture();
    const RunConfig cfg = small_cfg();

    VictimTrainResult a = train_victim(fx.dirs, cfg);
    VictimTrainResult b = train_victim(fx.dirs, cfg);

    CHECK(a.rounds == 1);
    CHECK(a.gate_mean_iou >= cfg.victim_iou_gate);
    REQUIRE(a.history.size() == 15);
    REQUIRE(b.history.size() == a.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(victim_loss_record_line(a.history[i]) == victim_loss_record_line(b.history[i]));
        CHECK(a.history[i].total == b.history[i].total);
    }
    CHECK(a.gate_mean_iou == b.gate_mean_iou);
    check_params_equal(a.tracker.params, b.tracker.params);
}
