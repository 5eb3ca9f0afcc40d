#pragma once

#include <optional>
#include <string>

#include "hinet/image.hpp"

namespace hinet {

struct LoadedPng {
    Image image;
    std::optional<Mask> alpha;  // present for RGBA inputs
};

// 8-bit PNG only; 16-bit inputs are rejected. Grayscale and palette images
// are expanded to RGB.
LoadedPng load_png(const std::string& path);

// Loads a mask from a PNG (first channel after RGB expansion).
Mask load_mask_png(const std::string& path);

// Clamps to [0,1] and quantizes round-half-up to 8 bits.
void save_png(const Image& img, const std::string& path);
void save_png(const Mask& mask, const std::string& path);

}  // namespace hinet
