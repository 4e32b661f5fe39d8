#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ad2/geometry.hpp"
#include "ad2/image.hpp"
#include "ad2/rng.hpp"

namespace ad2 {

struct SynthSequence {
    std::vector<Image> frames;
    std::vector<BBox> boxes;  // ground truth per frame, center convention
};

// Procedural sequence: a textured rectangle moving over a textured static
// background. Target sizes cycle with the sequence index so the adaptive
// pyramid depth varies across the corpus.
SynthSequence make_synth_sequence(std::uint64_t seed, int seq_index, int frames, int width, int height);

// Writes seq_### directories (frames/%06d.png + groundtruth.txt) under out_dir.
void write_synth_corpus(const std::string& out_dir, std::uint64_t seed, int sequences, int frames, int width,
                        int height);

}  // namespace ad2
