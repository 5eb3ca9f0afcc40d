#pragma once

#include <cstddef>

#include "hinet/mem.hpp"

namespace hinet {

// RGB image, row-major, channel-interleaved, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    static constexpr int channels = 3;
    Buffer<float> data;

    Image() = default;
    Image(int h, int w, AllocClass cls = AllocClass::kData)
        : height(h), width(w), data(std::size_t(h) * w * channels, cls, "image") {}

    std::size_t pixel_count() const { return std::size_t(height) * width; }
    float& at(int i, int j, int c) { return data[(std::size_t(i) * width + j) * channels + c]; }
    float at(int i, int j, int c) const { return data[(std::size_t(i) * width + j) * channels + c]; }
};

// Single-channel mask, values in [0,1]; foreground is value > 0.5.
struct Mask {
    int height = 0;
    int width = 0;
    Buffer<float> data;

    Mask() = default;
    Mask(int h, int w, AllocClass cls = AllocClass::kData)
        : height(h), width(w), data(std::size_t(h) * w, cls, "mask") {}

    float& at(int i, int j) { return data[std::size_t(i) * width + j]; }
    float at(int i, int j) const { return data[std::size_t(i) * width + j]; }
};

inline constexpr float kForegroundThreshold = 0.5f;

// Bilinear resize with the pixel-centers-at-(i+0.5)/N convention
// (align-corners false). Output values are convex combinations of inputs.
Image resize_bilinear(const Image& img, int out_h, int out_w);
Mask resize_bilinear(const Mask& mask, int out_h, int out_w);

// out = m * fg + (1 - m) * bg, per pixel.
Image blend_with_mask(const Image& fg, const Image& bg, const Mask& mask);

Image clamp01(Image img);

}  // namespace hinet
