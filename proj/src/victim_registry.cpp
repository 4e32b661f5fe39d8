#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ad2/errors.hpp"
#include "ad2/rng.hpp"
#include "ad2/victim.hpp"

namespace ad2 {

namespace {

std::map<std::string, std::shared_ptr<TrackerAdapter>>& registry() {
    static std::map<std::string, std::shared_ptr<TrackerAdapter>> r;
    return r;
}

// Runs the adapter once on a noise frame with a bright centered square and
// checks everything the evaluation loop will later rely on.
void probe(const std::string& name, const TrackerAdapter& a) {
    auto fail = [&](const std::string& why) {
        throw ConfigError("tracker '" + name + "' failed contract probe: " + why);
    };

    if (a.search_size() < 16) fail("search size below 16");
    if (!(a.search_context() > 0)) fail("non-positive search context");
    const GridMap gm = a.grid_map();
    if (gm.stride <= 0) fail("non-positive response stride");

    BBox box;
    box.w = 24;
    box.h = 24;
    const double side = context_side(box, a.search_context());
    const int dim = std::max(64, static_cast<int>(std::ceil(side)) + 16);
    box.cx = dim / 2.0;
    box.cy = dim / 2.0;

    Image frame(dim, dim, 3);
    Rng rng(0x70726f6265ULL);
    frame.fill_uniform(rng, 0.0f, 0.35f);
    for (int y = dim / 2 - 12; y < dim / 2 + 12; ++y)
        for (int x = dim / 2 - 12; x < dim / 2 + 12; ++x)
            for (int c = 0; c < 3; ++c) frame.at(y, x, c) = 0.9f;

    try {
        const TemplateFeat tmpl = a.init_template(frame, box);
        auto [patch, geom] = crop_search_patch(frame, box, a.search_size(), a.search_context());
        const HeadMaps maps = a.forward(tmpl, patch);
        if (!maps.score.grid.same_shape_spatial(maps.regression.grid))
            fail("score and regression maps disagree on spatial size");
        const int gh = maps.score.grid.h();
        if (gh < 1) fail("empty response grid");
        if (gm.origin + (gh - 1) * gm.stride > a.search_size() - 1)
            fail("response grid extends past the search patch");
        const TrackerOutput out = a.track_step(tmpl, patch, geom, box);
        require_valid(out.predicted_box, "probe prediction");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        fail(e.what());
    }
}

}  // namespace

void register_tracker(const std::string& name, std::shared_ptr<TrackerAdapter> adapter) {
    if (name.empty()) throw ConfigError("tracker name must be non-empty");
    if (!adapter) throw ConfigError("tracker '" + name + "' is null");
    if (registry().count(name)) throw ConfigError("tracker '" + name + "' already registered");
    probe(name, *adapter);
    registry().emplace(name, std::move(adapter));
}

std::shared_ptr<TrackerAdapter> get_tracker(const std::string& name) {
    auto it = registry().find(name);
    if (it == registry().end()) {
        std::string known;
        for (const auto& [k, v] : registry()) known += (known.empty() ? "" : ", ") + k;
        throw ConfigError("unknown tracker '" + name + "' (registered: " + (known.empty() ? "none" : known) + ")");
    }
    return it->second;
}

std::vector<std::string> registered_trackers() {
    std::vector<std::string> names;
    names.reserve(registry().size());
    for (const auto& [k, v] : registry()) names.push_back(k);
    return names;
}

void clear_tracker_registry() { registry().clear(); }

}  // namespace ad2
