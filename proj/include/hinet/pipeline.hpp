#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hinet/serialize.hpp"

namespace hinet {

// Disjoint cover of the output rows used for memory-bounded inference.
struct TilePlan {
    struct Tile {
        int row0 = 0;
        int rows = 0;
    };
    std::vector<Tile> tiles;
    std::size_t max_batch = 0;
};

// Greedy maximal row spans, each holding at most max_batch vectors.
// Requires max_batch >= w (at least one row per tile).
TilePlan plan_tiles(int h, int w, std::size_t max_batch);
// Plan with (approximately) the given tile count: ceil(h / count) rows each.
TilePlan plan_tiles_by_count(int h, int w, int count);

enum class HarmonizeMode { kFull, kTiled, kRegion, kLutOnly };

struct HarmonizeOptions {
    HarmonizeMode mode = HarmonizeMode::kFull;
    std::size_t max_batch = 1 << 20;
    std::optional<int> target_h;
    std::optional<int> target_w;
    bool blend_with_mask = true;
};

struct HarmonizeInfo {
    QueryStats stats;
    bool pyramid_mode = false;  // false = same-size batches (non-divisible dims)
};

// End-to-end harmonization. The encoder always sees the composite and mask
// bilinearly resized to its input size; the decoder is queried at native (or
// target) resolution. Output is clamped to [0,1]; with blend_with_mask the
// background comes from the input.
Image harmonize(const Image& img, const Mask& mask, const Model& model,
                const HarmonizeOptions& opts = {}, HarmonizeInfo* info = nullptr);

Image harmonize_tiled(const Image& img, const Mask& mask, const Model& model,
                      const TilePlan& plan, HarmonizeInfo* info = nullptr);

// Decoder evaluated only at foreground pixel coordinates; background copied
// from the input. Requires a nonempty foreground.
Image harmonize_region(const Image& img, const Mask& mask, const Model& model,
                       HarmonizeInfo* info = nullptr);

Image harmonize_at_resolution(const Image& img, const Mask& mask, const Model& model, int target_h,
                              int target_w, HarmonizeInfo* info = nullptr);

// LUT color transform only: the predicted (or override) lattice applied to
// the foreground.
Image harmonize_lut_only(const Image& img, const Mask& mask, const Model& model);

// Predicts the 3D LUT for one frame (encode + LUT head).
Lut3D predict_lut(const Image& img, const Mask& mask, const Model& model);

// LUT-based video mode: the LUT is predicted on keyframes 0, k, 2k, ... (and
// the final frame), linearly interpolated in between, and applied to the
// foreground of every frame.
std::vector<Image> harmonize_video_lut(const std::vector<Image>& frames,
                                       const std::vector<Mask>& masks, const Model& model,
                                       int keyframe_interval);

}  // namespace hinet
