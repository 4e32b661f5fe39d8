#pragma once

#include <string>

#include "ad2/image.hpp"

namespace ad2 {

// PNG/JPG decode to an [H][W][3] float image in [0,1], RGB order.
Image load_image(const std::string& path);

// Encodes by extension (.png or .jpg). Values are clamped to [0,1] first.
void save_image(const std::string& path, const Image& img);

// Grayscale convenience for heatmaps: [H][W][1] in [0,1] to PNG.
void save_gray(const std::string& path, const Tensor<float>& map);

}  // namespace ad2
