#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cellmixer/image.hpp"

namespace cellmixer {

// Single-channel PNG, 8-bit or 16-bit, mapped to [0,1] on load.
Image load_image_png(const std::string& path);
void save_image_png(const std::string& path, const Image& img, int bit_depth = 16);

// Label maps are stored as 8-bit grayscale holding class indices directly.
LabelMap load_label_png(const std::string& path);
void save_label_png(const std::string& path, const LabelMap& labels);

// Interleaved RGB, 8-bit, used for overlays.
void save_rgb_png(const std::string& path, int width, int height,
                  const std::vector<std::uint8_t>& rgb);

} // namespace cellmixer
