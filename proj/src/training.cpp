#include "ad2/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

#include "ad2/evaluation.hpp"
#include "ad2/image_io.hpp"

namespace ad2 {

using nlohmann::ordered_json;

Adam::Adam(const ParamStore& store, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(store.count());
    v_.reserve(store.count());
    for (std::size_t i = 0; i < store.count(); ++i) {
        m_.emplace_back(store.tensor(i).shape());
        v_.emplace_back(store.tensor(i).shape());
    }
}

void Adam::step(ParamStore& store, const std::vector<Tensor<float>>& grads) {
    if (grads.size() != m_.size()) throw InvariantError("Adam: gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t p = 0; p < m_.size(); ++p) {
        auto& theta = store.tensor(p);
        const auto& g = grads[p];
        if (!g.same_shape(theta)) throw InvariantError("Adam: gradient shape mismatch at " + store.name(p));
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
            v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] = static_cast<float>(theta[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

namespace {

// Frame cache, filled up front on the main thread so that worker threads
// only ever read it.
class FrameCache {
public:
    void warm(const std::string& path) {
        if (!cache_.count(path)) cache_.emplace(path, load_image(path));
    }

    const Image& get(const std::string& path) const {
        auto it = cache_.find(path);
        if (it == cache_.end()) throw InvariantError("frame cache miss: " + path);
        return it->second;
    }

private:
    std::map<std::string, Image> cache_;
};

struct PreparedItem {
    Image clean_patch;
    SearchGeometry geom;
    ScoreMap clean_score;
    RegionMasks masks;
    std::size_t tmpl_index = 0;
};

struct PreparedCorpus {
    std::vector<TemplateFeat> templates;
    std::vector<PreparedItem> items;
};

PreparedCorpus prepare_attack_corpus(const TrainingCorpus& corpus, const ToyTracker& victim,
                                     const AttackConfig& acfg, FrameCache& frames) {
    PreparedCorpus out;
    std::map<std::string, std::size_t> tmpl_by_seq;
    for (const auto& item : corpus.items) {
        auto it = tmpl_by_seq.find(item.sequence_dir);
        if (it == tmpl_by_seq.end()) {
            frames.warm(item.template_path);
            out.templates.push_back(victim.init_template(frames.get(item.template_path), item.template_box));
            it = tmpl_by_seq.emplace(item.sequence_dir, out.templates.size() - 1).first;
        }
        PreparedItem p;
        p.tmpl_index = it->second;
        frames.warm(item.search_path);
        const Image& sf = frames.get(item.search_path);
        auto [patch, geom] = crop_search_patch(sf, item.search_box, victim.vcfg.search_size,
                                               victim.vcfg.context_search);
        p.clean_patch = std::move(patch);
        p.geom = geom;
        HeadMaps maps = victim.forward(out.templates[p.tmpl_index], p.clean_patch);
        p.clean_score = std::move(maps.score);
        p.masks = region_masks(p.clean_score, acfg);
        out.items.push_back(std::move(p));
    }
    return out;
}

struct ItemResult {
    std::vector<Tensor<float>> grads;
    LossRecord losses;
};

ItemResult attack_item_pass(const PreparedItem& item, const TemplateFeat& tmpl, const ToyTracker& victim,
                            const SruNetwork& sru, const AttackConfig& acfg) {
    Graph<float> g;
    BoundParams<float> sp(g, sru.params, true);
    BoundParams<float> vp(g, victim.params, false);
    Var clean = g.constant(item.clean_patch);
    Var adv = attack_patch_g(g, clean, item.geom, sp, sru.cfg, true);
    Var feat = victim.embed_g(g, adv, vp);
    auto [score, reg] = victim.heads_g(g, g.constant(tmpl), feat, vp);
    LossVars<float> lv = total_loss_g(g, score, reg, adv, clean, item.clean_score, item.masks, acfg);
    g.backward(lv.total);

    ItemResult r;
    r.losses.score = g.val(lv.score)[0];
    r.losses.drift = g.val(lv.drift)[0];
    r.losses.l2 = g.val(lv.l2)[0];
    r.losses.total = g.val(lv.total)[0];
    r.grads.reserve(sp.count());
    for (std::size_t i = 0; i < sp.count(); ++i) r.grads.push_back(g.grad(sp.var(i)));
    return r;
}

void dump_diagnostics(const std::string& dump_dir, int step, const std::vector<std::size_t>& batch,
                      const std::vector<ItemResult>& results, const PreparedCorpus& prep) {
    if (dump_dir.empty()) return;
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dump_dir, ec);
    if (ec) return;
    ordered_json j;
    j["step"] = step;
    j["items"] = ordered_json::array();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        ordered_json it;
        it["corpus_index"] = batch[b];
        it["score"] = results[b].losses.score;
        it["drift"] = results[b].losses.drift;
        it["l2"] = results[b].losses.l2;
        it["total"] = results[b].losses.total;
        j["items"].push_back(it);
        try {
            save_image((fs::path(dump_dir) / ("patch_" + std::to_string(b) + ".png")).string(),
                       prep.items[batch[b]].clean_patch);
        } catch (const std::exception&) {
        }
    }
    std::ofstream os(fs::path(dump_dir) / "nonfinite_batch.json");
    os << j.dump(2) << "\n";
}

std::string fmt_sig(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

std::string loss_record_line(const LossRecord& r) {
    return "{\"step\":" + std::to_string(r.step) + ",\"score\":" + fmt_sig(r.score) +
           ",\"drift\":" + fmt_sig(r.drift) + ",\"l2\":" + fmt_sig(r.l2) + ",\"total\":" + fmt_sig(r.total) + "}";
}

std::string victim_loss_record_line(const VictimLossRecord& r) {
    return "{\"step\":" + std::to_string(r.step) + ",\"cls\":" + fmt_sig(r.cls) + ",\"reg\":" + fmt_sig(r.reg) +
           ",\"total\":" + fmt_sig(r.total) + "}";
}

AttackTrainResult train_attack(const TrainingCorpus& corpus, const ToyTracker& victim, const SruNetwork& start,
                               const RunConfig& cfg, const std::string& dump_dir,
                               const std::function<void(const LossRecord&)>& on_record) {
    cfg.validate();
    if (corpus.items.empty()) throw ConfigError("train_attack: empty corpus");
    const std::uint64_t victim_before = param_hash(victim.params);

    AttackTrainResult result;
    result.net.cfg = start.cfg;
    for (std::size_t i = 0; i < start.params.count(); ++i)
        result.net.params.add(start.params.name(i), start.params.tensor(i));
    if (cfg.train_steps == 0) return result;

    FrameCache frames;
    const PreparedCorpus prep = prepare_attack_corpus(corpus, victim, cfg.attack, frames);

    SruNetwork net;
    net.cfg = start.cfg;
    for (std::size_t i = 0; i < start.params.count(); ++i) net.params.add(start.params.name(i), start.params.tensor(i));

    Adam opt(net.params, cfg.train_lr);
    Rng base(cfg.seed);
    Rng sampler = base.fork(0x6174746bULL);  // attack-sampling stream

    const int batch = cfg.train_batch;
    std::vector<std::size_t> batch_idx(static_cast<std::size_t>(batch));
    std::vector<ItemResult> results(static_cast<std::size_t>(batch));

    bool have_best = false;
    for (int step = 0; step < cfg.train_steps; ++step) {
        for (int b = 0; b < batch; ++b)
            batch_idx[static_cast<std::size_t>(b)] = sampler.below(prep.items.size());

        auto run_slot = [&](std::size_t b) {
            const PreparedItem& item = prep.items[batch_idx[b]];
            results[b] = attack_item_pass(item, prep.templates[item.tmpl_index], victim, net, cfg.attack);
        };
        if (cfg.workers > 1) {
            std::vector<std::thread> pool;
            for (int w = 0; w < cfg.workers; ++w)
                pool.emplace_back([&, w] {
                    for (std::size_t b = static_cast<std::size_t>(w); b < batch_idx.size();
                         b += static_cast<std::size_t>(cfg.workers))
                        run_slot(b);
                });
            for (auto& t : pool) t.join();
        } else {
            for (std::size_t b = 0; b < batch_idx.size(); ++b) run_slot(b);
        }

        LossRecord rec;
        rec.step = step;
        std::vector<Tensor<float>> grads;
        grads.reserve(net.params.count());
        for (std::size_t p = 0; p < net.params.count(); ++p) grads.emplace_back(net.params.tensor(p).shape());
        const float inv_b = 1.0f / static_cast<float>(batch);
        for (std::size_t b = 0; b < results.size(); ++b) {
            rec.score += results[b].losses.score;
            rec.drift += results[b].losses.drift;
            rec.l2 += results[b].losses.l2;
            rec.total += results[b].losses.total;
            for (std::size_t p = 0; p < grads.size(); ++p) {
                const auto& src = results[b].grads[p];
                auto& dst = grads[p];
                if (src.size() == dst.size())
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] * inv_b;
            }
        }
        rec.score /= batch;
        rec.drift /= batch;
        rec.l2 /= batch;
        rec.total /= batch;

        if (!std::isfinite(rec.total)) {
            dump_diagnostics(dump_dir, step, batch_idx, results, prep);
            throw InvariantError("train_attack: non-finite loss at step " + std::to_string(step) +
                                 " (score=" + fmt_sig(rec.score) + " drift=" + fmt_sig(rec.drift) +
                                 " l2=" + fmt_sig(rec.l2) + ")");
        }

        opt.step(net.params, grads);
        result.history.push_back(rec);
        if (on_record) on_record(rec);

        if (!have_best || rec.total < result.best_loss) {
            have_best = true;
            result.best_loss = rec.total;
            result.best_step = step;
            for (std::size_t p = 0; p < net.params.count(); ++p)
                result.net.params.get(net.params.name(p)) = net.params.tensor(p);
        }
    }

    if (param_hash(victim.params) != victim_before)
        throw InvariantError("train_attack: victim parameters changed during attack training");
    return result;
}

// ---- victim pretraining ----

namespace {

// Balanced classification targets plus regression targets at positive cells.
struct VictimLabels {
    Tensor<float> ce_weights;   // [H][W][2]
    Tensor<float> reg_target;   // [H][W][4]
    Tensor<float> reg_weight;   // [H][W][4]
};

VictimLabels make_labels(const SearchGeometry& geom, const GridMap& grid, int grid_h, int grid_w,
                         const BBox& prev_box, const BBox& gt_box) {
    const double scale = geom.patch_w / geom.search_size;
    const double x0 = prev_box.cx - geom.patch_w / 2;
    const double y0 = prev_box.cy - geom.patch_h / 2;
    // target center in response-cell coordinates
    const double px = (gt_box.cx - x0 + 0.5) / scale - 0.5;
    const double py = (gt_box.cy - y0 + 0.5) / scale - 0.5;
    const double u = (px - grid.origin) / grid.stride;
    const double v = (py - grid.origin) / grid.stride;

    constexpr double kPosRadius = 1.5;
    constexpr double kNegRadius = 3.0;
    VictimLabels lab;
    lab.ce_weights = Tensor<float>(grid_h, grid_w, 2);
    lab.reg_target = Tensor<float>(grid_h, grid_w, 4);
    lab.reg_weight = Tensor<float>(grid_h, grid_w, 4);

    std::vector<std::uint8_t> kind(static_cast<std::size_t>(grid_h) * grid_w, 0);  // 0 ignore, 1 pos, 2 neg
    int n_pos = 0, n_neg = 0;
    for (int i = 0; i < grid_h; ++i)
        for (int j = 0; j < grid_w; ++j) {
            const double d = std::hypot(i - v, j - u);
            auto& k = kind[static_cast<std::size_t>(i) * grid_w + j];
            if (d <= kPosRadius) {
                k = 1;
                ++n_pos;
            } else if (d >= kNegRadius) {
                k = 2;
                ++n_neg;
            }
        }
    const float wp = n_pos ? 0.5f / n_pos : 0.0f;
    const float wn = n_neg ? 0.5f / n_neg : 0.0f;
    const float wr = n_pos ? 1.0f / (4.0f * n_pos) : 0.0f;
    for (int i = 0; i < grid_h; ++i)
        for (int j = 0; j < grid_w; ++j) {
            const auto k = kind[static_cast<std::size_t>(i) * grid_w + j];
            if (k == 1) {
                lab.ce_weights.at(i, j, 1) = wp;
                lab.reg_target.at(i, j, 0) = static_cast<float>(u - j);
                lab.reg_target.at(i, j, 1) = static_cast<float>(v - i);
                lab.reg_target.at(i, j, 2) = static_cast<float>(std::log(gt_box.w / prev_box.w));
                lab.reg_target.at(i, j, 3) = static_cast<float>(std::log(gt_box.h / prev_box.h));
                for (int c = 0; c < 4; ++c) lab.reg_weight.at(i, j, c) = wr;
            } else if (k == 2) {
                lab.ce_weights.at(i, j, 0) = wn;
            }
        }
    return lab;
}

struct VictimItemResult {
    std::vector<Tensor<float>> grads;
    double cls = 0, reg = 0;
};

VictimItemResult victim_item_pass(const ToyTracker& tracker, const Image& tmpl_patch, const Image& search_patch,
                                  const VictimLabels& lab) {
    Graph<float> g;
    BoundParams<float> p(g, tracker.params, true);
    Var tf = tracker.embed_g(g, g.constant(tmpl_patch), p);
    Var sf = tracker.embed_g(g, g.constant(search_patch), p);
    auto [score, reg] = tracker.heads_g(g, tf, sf, p);
    Var ce = g.affine(g.sum(g.mul(g.constant(lab.ce_weights), g.log_elem(g.softmax_c(score)))), -1.0f, 0.0f);
    Var rl = g.huber_weighted(reg, lab.reg_target, lab.reg_weight, 1.0f);
    Var total = g.add(ce, rl);
    g.backward(total);

    VictimItemResult r;
    r.cls = g.val(ce)[0];
    r.reg = g.val(rl)[0];
    r.grads.reserve(p.count());
    for (std::size_t i = 0; i < p.count(); ++i) r.grads.push_back(g.grad(p.var(i)));
    return r;
}

double clean_gate_iou(const ToyTracker& tracker, const std::vector<Sequence>& seqs) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& seq : seqs) {
        const TrackingRun run = run_sequence(tracker, seq, "clean", nullptr);
        for (std::size_t f = 1; f < run.iou_series.size(); ++f) {
            sum += run.iou_series[f];
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

VictimTrainResult train_victim(const std::vector<std::string>& sequence_dirs, const RunConfig& cfg) {
    cfg.validate();
    const TrainingCorpus corpus = build_corpus(sequence_dirs, cfg.train_cadence);

    std::vector<Sequence> seqs;
    seqs.reserve(sequence_dirs.size());
    for (const auto& d : sequence_dirs) seqs.push_back(load_sequence(d));

    Rng base(cfg.seed);
    Rng init_rng = base.fork(0x76696374ULL);  // victim-init stream
    VictimTrainResult result;
    result.tracker = ToyTracker::init(cfg.tracker, init_rng);
    ToyTracker& tracker = result.tracker;
    const GridMap grid = tracker.grid_map();
    const int grid_dim = embed_dim(cfg.tracker.search_size) - embed_dim(cfg.tracker.template_size) + 1;
    if (grid_dim < 3) throw ConfigError("tracker geometry yields a response grid smaller than 3x3");

    FrameCache frames;
    for (const auto& item : corpus.items) frames.warm(item.search_path);
    std::vector<Image> tmpl_patches;
    std::vector<std::size_t> tmpl_of_item;
    {
        std::map<std::string, std::size_t> by_seq;
        for (const auto& item : corpus.items) {
            auto it = by_seq.find(item.sequence_dir);
            if (it == by_seq.end()) {
                frames.warm(item.template_path);
                auto [patch, g2] = crop_search_patch(frames.get(item.template_path), item.template_box,
                                                     cfg.tracker.template_size, cfg.tracker.context_template);
                (void)g2;
                tmpl_patches.push_back(std::move(patch));
                it = by_seq.emplace(item.sequence_dir, tmpl_patches.size() - 1).first;
            }
            tmpl_of_item.push_back(it->second);
        }
    }

    Adam opt(tracker.params, cfg.victim_lr);
    Rng sampler = base.fork(0x76736d70ULL);  // victim-sampling stream
    const int batch = cfg.victim_batch;
    std::vector<VictimItemResult> results(static_cast<std::size_t>(batch));

    int global_step = 0;
    for (int round = 1; round <= 3; ++round) {
        result.rounds = round;
        for (int step = 0; step < cfg.victim_steps; ++step, ++global_step) {
            VictimLossRecord rec;
            rec.step = global_step;
            std::vector<std::size_t> batch_idx(static_cast<std::size_t>(batch));
            std::vector<BBox> prevs(static_cast<std::size_t>(batch));
            for (int b = 0; b < batch; ++b) {
                const std::size_t idx = sampler.below(corpus.items.size());
                const BBox& gt = corpus.items[idx].search_box;
                BBox prev = gt;
                prev.cx += sampler.uniform(-0.25, 0.25) * gt.w;
                prev.cy += sampler.uniform(-0.25, 0.25) * gt.h;
                prev.w *= std::exp(sampler.uniform(-0.2, 0.2));
                prev.h *= std::exp(sampler.uniform(-0.2, 0.2));
                batch_idx[static_cast<std::size_t>(b)] = idx;
                prevs[static_cast<std::size_t>(b)] = prev;
            }

            auto run_slot = [&](std::size_t b) {
                const CorpusItem& item = corpus.items[batch_idx[b]];
                auto [patch, geom] = crop_search_patch(frames.get(item.search_path), prevs[b],
                                                       cfg.tracker.search_size, cfg.tracker.context_search);
                const VictimLabels lab =
                    make_labels(geom, grid, grid_dim, grid_dim, prevs[b], item.search_box);
                results[b] = victim_item_pass(tracker, tmpl_patches[tmpl_of_item[batch_idx[b]]], patch, lab);
            };
            if (cfg.workers > 1) {
                std::vector<std::thread> pool;
                for (int w = 0; w < cfg.workers; ++w)
                    pool.emplace_back([&, w] {
                        for (std::size_t b = static_cast<std::size_t>(w); b < batch_idx.size();
                             b += static_cast<std::size_t>(cfg.workers))
                            run_slot(b);
                    });
                for (auto& t : pool) t.join();
            } else {
                for (std::size_t b = 0; b < batch_idx.size(); ++b) run_slot(b);
            }

            std::vector<Tensor<float>> grads;
            grads.reserve(tracker.params.count());
            for (std::size_t p = 0; p < tracker.params.count(); ++p)
                grads.emplace_back(tracker.params.tensor(p).shape());
            const float inv_b = 1.0f / static_cast<float>(batch);
            for (const auto& r : results) {
                rec.cls += r.cls;
                rec.reg += r.reg;
                for (std::size_t p = 0; p < grads.size(); ++p)
                    for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += r.grads[p][i] * inv_b;
            }
            rec.cls /= batch;
            rec.reg /= batch;
            rec.total = rec.cls + rec.reg;
            if (!std::isfinite(rec.total))
                throw InvariantError("train_victim: non-finite loss at step " + std::to_string(global_step));
            opt.step(tracker.params, grads);
            result.history.push_back(rec);
        }

        result.gate_mean_iou = clean_gate_iou(tracker, seqs);
        if (result.gate_mean_iou >= cfg.victim_iou_gate) return result;
    }
    throw InvariantError("train_victim: mean IoU " + fmt_sig(result.gate_mean_iou) + " below gate " +
                         fmt_sig(cfg.victim_iou_gate) + " after 3 rounds");
}

}  // namespace ad2
