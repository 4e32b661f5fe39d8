#include "ad2/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ad2/errors.hpp"

namespace ad2 {

namespace fs = std::filesystem;

Sequence load_sequence(const std::string& dir) {
    const fs::path frames_dir = fs::path(dir) / "frames";
    const fs::path gt_path = fs::path(dir) / "groundtruth.txt";
    if (!fs::is_directory(frames_dir)) throw IoError("no frames/ directory in " + dir);
    if (!fs::is_regular_file(gt_path)) throw IoError("no groundtruth.txt in " + dir);

    Sequence seq;
    seq.dir = dir;
    for (const auto& e : fs::directory_iterator(frames_dir)) {
        if (!e.is_regular_file()) continue;
        const std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") seq.frame_paths.push_back(e.path().string());
    }
    std::sort(seq.frame_paths.begin(), seq.frame_paths.end());
    if (seq.frame_paths.empty()) throw InvariantError("sequence has no frames: " + dir);

    std::ifstream gt(gt_path);
    if (!gt) throw IoError("cannot open " + gt_path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(gt, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream is(line);
        double x, y, w, h;
        if (!(is >> x >> y >> w >> h))
            throw InvariantError(gt_path.string() + ":" + std::to_string(lineno) + ": expected x,y,w,h");
        const BBox b = BBox::from_tl(x, y, w, h);
        if (!b.valid())
            throw InvariantError(gt_path.string() + ":" + std::to_string(lineno) + ": degenerate box");
        seq.boxes.push_back(b);
    }
    if (seq.boxes.size() != seq.frame_paths.size())
        throw InvariantError(dir + ": " + std::to_string(seq.frame_paths.size()) + " frames but " +
                             std::to_string(seq.boxes.size()) + " ground-truth lines");
    return seq;
}

std::vector<std::string> list_sequence_dirs(const std::string& root) {
    if (!fs::is_directory(root)) throw IoError("not a directory: " + root);
    if (fs::is_regular_file(fs::path(root) / "groundtruth.txt")) return {root};
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory() && fs::is_regular_file(e.path() / "groundtruth.txt"))
            dirs.push_back(e.path().string());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw ConfigError("no sequences found under " + root);
    return dirs;
}

TrainingCorpus build_corpus(const std::vector<std::string>& sequence_dirs, int cadence) {
    if (cadence < 1) throw ConfigError("corpus cadence must be >= 1");
    TrainingCorpus corpus;
    corpus.cadence = cadence;
    for (const auto& dir : sequence_dirs) {
        const Sequence seq = load_sequence(dir);
        for (std::size_t f = 0; f < seq.size(); f += static_cast<std::size_t>(cadence)) {
            CorpusItem item;
            item.sequence_dir = dir;
            item.template_path = seq.frame_paths.front();
            item.template_box = seq.boxes.front();
            item.search_path = seq.frame_paths[f];
            item.search_box = seq.boxes[f];
            item.frame_index = static_cast<int>(f);
            corpus.items.push_back(std::move(item));
        }
    }
    if (corpus.items.empty()) throw ConfigError("corpus is empty");
    return corpus;
}

}  // namespace ad2
