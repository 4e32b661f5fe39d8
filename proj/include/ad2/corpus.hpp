#pragma once

#include <string>
#include <vector>

#include "ad2/geometry.hpp"

namespace ad2 {

// On-disk sequence: frames/%06d.png (or .jpg) plus groundtruth.txt with one
// top-left x,y,w,h line per frame.
struct Sequence {
    std::string dir;
    std::vector<std::string> frame_paths;
    std::vector<BBox> boxes;  // converted to center convention

    std::size_t size() const { return frame_paths.size(); }
};

Sequence load_sequence(const std::string& dir);

// Sorted sequence subdirectories under root; root itself if it is a sequence.
std::vector<std::string> list_sequence_dirs(const std::string& root);

struct CorpusItem {
    std::string sequence_dir;
    std::string template_path;  // the sequence's initial frame
    BBox template_box;
    std::string search_path;
    BBox search_box;
    int frame_index = 0;
};

struct TrainingCorpus {
    std::vector<CorpusItem> items;
    int cadence = 10;
};

// Samples every cadence-th frame of each sequence (frame 0 included), pairing
// it with the sequence's initial frame as the template source.
TrainingCorpus build_corpus(const std::vector<std::string>& sequence_dirs, int cadence);

}  // namespace ad2
