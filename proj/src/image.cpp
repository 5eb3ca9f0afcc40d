#include "hinet/image.hpp"

#include <algorithm>
#include <cmath>

#include "hinet/common.hpp"

namespace hinet {

namespace {

struct SampleTap {
    int lo, hi;
    float frac;
};

inline SampleTap tap_for(int out_idx, int out_n, int in_n) {
    // Pixel centers at (i+0.5)/N; source coordinate clamped to valid range.
    const float src = (float(out_idx) + 0.5f) * float(in_n) / float(out_n) - 0.5f;
    SampleTap t;
    if (src <= 0.f) {
        t.lo = t.hi = 0;
        t.frac = 0.f;
    } else if (src >= float(in_n - 1)) {
        t.lo = t.hi = in_n - 1;
        t.frac = 0.f;
    } else {
        t.lo = int(src);
        t.hi = t.lo + 1;
        t.frac = src - float(t.lo);
    }
    return t;
}

void resize_plane(const float* src, int in_h, int in_w, int ch,
                  float* dst, int out_h, int out_w) {
    parallel_for(std::size_t(out_h), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            const SampleTap ty = tap_for(int(i), out_h, in_h);
            for (int j = 0; j < out_w; ++j) {
                const SampleTap tx = tap_for(j, out_w, in_w);
                const float w00 = (1.f - ty.frac) * (1.f - tx.frac);
                const float w01 = (1.f - ty.frac) * tx.frac;
                const float w10 = ty.frac * (1.f - tx.frac);
                const float w11 = ty.frac * tx.frac;
                const float* p00 = src + (std::size_t(ty.lo) * in_w + tx.lo) * ch;
                const float* p01 = src + (std::size_t(ty.lo) * in_w + tx.hi) * ch;
                const float* p10 = src + (std::size_t(ty.hi) * in_w + tx.lo) * ch;
                const float* p11 = src + (std::size_t(ty.hi) * in_w + tx.hi) * ch;
                float* out = dst + (i * out_w + j) * ch;
                for (int c = 0; c < ch; ++c)
                    out[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
            }
        }
    });
}

}  // namespace

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    require(img.height >= 1 && img.width >= 1, "resize_bilinear: empty input image");
    require(out_h >= 1 && out_w >= 1, "resize_bilinear: target dims must be >= 1");
    Image out(out_h, out_w);
    resize_plane(img.data.data(), img.height, img.width, Image::channels,
                 out.data.data(), out_h, out_w);
    return out;
}

Mask resize_bilinear(const Mask& mask, int out_h, int out_w) {
    require(mask.height >= 1 && mask.width >= 1, "resize_bilinear: empty input mask");
    require(out_h >= 1 && out_w >= 1, "resize_bilinear: target dims must be >= 1");
    Mask out(out_h, out_w);
    resize_plane(mask.data.data(), mask.height, mask.width, 1, out.data.data(), out_h, out_w);
    return out;
}

Image blend_with_mask(const Image& fg, const Image& bg, const Mask& mask) {
    require(fg.height == bg.height && fg.width == bg.width &&
                fg.height == mask.height && fg.width == mask.width,
            "blend_with_mask: dimension mismatch");
    Image out(fg.height, fg.width);
    const std::size_t n = fg.pixel_count();
    for (std::size_t p = 0; p < n; ++p) {
        const float m = mask.data[p];
        for (int c = 0; c < 3; ++c)
            out.data[p * 3 + c] = m * fg.data[p * 3 + c] + (1.f - m) * bg.data[p * 3 + c];
    }
    return out;
}

Image clamp01(Image img) {
    for (auto& v : img.data) v = std::clamp(v, 0.f, 1.f);
    return img;
}

}  // namespace hinet
