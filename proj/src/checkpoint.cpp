#include "ad2/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace ad2 {
namespace {

using nlohmann::ordered_json;

// Container layout: tag line, u64 little-endian header length, JSON header
// (config + tensor directory), then raw float32 payload in directory order.
void write_store(std::ostream& os, const std::string& tag, const ordered_json& config, const ParamStore& params) {
    ordered_json header;
    header["config"] = config;
    header["tensors"] = ordered_json::array();
    for (std::size_t i = 0; i < params.count(); ++i) {
        ordered_json t;
        t["name"] = params.name(i);
        t["shape"] = params.tensor(i).shape();
        header["tensors"].push_back(t);
    }
    const std::string hs = header.dump();
    os << tag << '\n';
    const std::uint64_t len = hs.size();
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& t = params.tensor(i);
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!os) throw IoError("checkpoint: write failed");
}

ordered_json read_store(std::istream& is, const std::string& path, const std::string& expect_tag,
                        ParamStore& params) {
    std::string tag;
    if (!std::getline(is, tag)) throw IoError("checkpoint: cannot read " + path);
    if (tag != expect_tag)
        throw IoError("checkpoint " + path + ": format tag '" + tag + "', expected '" + expect_tag + "'");
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!is || len == 0 || len > (1u << 26)) throw IoError("checkpoint " + path + ": bad header length");
    std::string hs(len, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("checkpoint " + path + ": truncated header");
    ordered_json header = ordered_json::parse(hs, nullptr, false);
    if (header.is_discarded() || !header.contains("tensors"))
        throw IoError("checkpoint " + path + ": malformed header");
    for (const auto& td : header["tensors"]) {
        const std::string name = td.at("name").get<std::string>();
        const std::vector<int> shape = td.at("shape").get<std::vector<int>>();
        Tensor<float> t(shape);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!is) throw IoError("checkpoint " + path + ": truncated payload at " + name);
        params.add(name, std::move(t));
    }
    return header["config"];
}

}  // namespace

void save_sru(const std::string& path, const SruNetwork& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    ordered_json cfg;
    cfg["levels"] = net.cfg.levels;
    cfg["convs_per_block"] = net.cfg.convs_per_block;
    cfg["feature_channels"] = net.cfg.feature_channels;
    cfg["group_count"] = net.cfg.group_count;
    cfg["att_kernel"] = net.cfg.att_kernel;
    write_store(os, kSruTag, cfg, net.params);
}

SruNetwork load_sru(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    SruNetwork net;
    ordered_json cfg = read_store(is, path, kSruTag, net.params);
    net.cfg.levels = cfg.at("levels").get<int>();
    net.cfg.convs_per_block = cfg.at("convs_per_block").get<int>();
    net.cfg.feature_channels = cfg.at("feature_channels").get<int>();
    net.cfg.group_count = cfg.at("group_count").get<int>();
    net.cfg.att_kernel = cfg.at("att_kernel").get<int>();
    net.cfg.validate();
    return net;
}

void save_victim(const std::string& path, const ToyTracker& tracker) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    ordered_json cfg;
    cfg["search_size"] = tracker.vcfg.search_size;
    cfg["template_size"] = tracker.vcfg.template_size;
    cfg["context_search"] = tracker.vcfg.context_search;
    cfg["context_template"] = tracker.vcfg.context_template;
    write_store(os, kVictimTag, cfg, tracker.params);
}

ToyTracker load_victim(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    ToyTracker t;
    ordered_json cfg = read_store(is, path, kVictimTag, t.params);
    t.vcfg.search_size = cfg.at("search_size").get<int>();
    t.vcfg.template_size = cfg.at("template_size").get<int>();
    t.vcfg.context_search = cfg.at("context_search").get<double>();
    t.vcfg.context_template = cfg.at("context_template").get<double>();
    t.vcfg.validate();
    return t;
}

}  // namespace ad2
