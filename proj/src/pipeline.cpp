#include "hinet/pipeline.hpp"

#include <algorithm>
#include <memory>

#include "hinet/common.hpp"

namespace hinet {

TilePlan plan_tiles(int h, int w, std::size_t max_batch) {
    require(h >= 1 && w >= 1, "plan_tiles: empty image");
    require(max_batch >= std::size_t(w), "plan_tiles: max_batch below one row of vectors");
    TilePlan plan;
    plan.max_batch = max_batch;
    const int rows_per = int(std::min<std::size_t>(max_batch / w, std::size_t(h)));
    int row = 0;
    while (row < h) {
        const int rows = std::min(rows_per, h - row);
        plan.tiles.push_back({row, rows});
        row += rows;
    }
    return plan;
}

TilePlan plan_tiles_by_count(int h, int w, int count) {
    require(count >= 1, "plan_tiles_by_count: count must be >= 1");
    const int rows_per = (h + count - 1) / count;
    return plan_tiles(h, w, std::size_t(rows_per) * std::size_t(w));
}

namespace {

// Owned pyramid planes + query levels for one decode resolution.
struct LevelSet {
    std::vector<std::unique_ptr<Image>> owned_imgs;
    std::vector<std::unique_ptr<Mask>> owned_masks;
    std::vector<QueryLevel> levels;  // one per decoder block, finest last
    bool pyramid = false;
};

// Per the inference rule, blocks run at their configured scales only when the
// resolution divides evenly; otherwise every block receives full-resolution
// batches of the same size.
LevelSet build_levels(const Image& img, const Mask& mask, const ModelConfig& cfg,
                      bool with_fine_indices) {
    const int h = img.height, w = img.width;
    const int max_scale = cfg.decoder.max_scale();
    LevelSet set;
    set.pyramid = (h % max_scale == 0) && (w % max_scale == 0);
    const int nb = cfg.decoder.num_blocks();
    set.levels.resize(nb);
    for (int b = 0; b < nb; ++b) {
        const int s = set.pyramid ? cfg.decoder.block_scales[b] : 1;
        QueryLevel& level = set.levels[b];
        if (s == 1) {
            level.plane = PlaneView{&img, &mask, h, w, 0, 0};
        } else {
            const int sh = (h + s - 1) / s, sw = (w + s - 1) / s;
            set.owned_imgs.push_back(std::make_unique<Image>(resize_bilinear(img, sh, sw)));
            set.owned_masks.push_back(std::make_unique<Mask>(resize_bilinear(mask, sh, sw)));
            level.plane =
                PlaneView{set.owned_imgs.back().get(), set.owned_masks.back().get(), sh, sw, 0, 0};
        }
        if (b + 1 < nb || with_fine_indices)
            level.idx = full_index_list(level.plane.scale_h, level.plane.scale_w);
    }
    return set;
}

struct PreparedModel {
    DecoderParams<float> params;
    MaterializedDecoder<float> mats;
};

PreparedModel prepare(const Image& img, const Mask& mask, const Model& model) {
    validate(model.cfg);
    require(img.height == mask.height && img.width == mask.width,
            "harmonize: image/mask dimension mismatch");
    const int s = model.cfg.encoder.input_size;
    const Image enc_img = resize_bilinear(img, s, s);
    const Mask enc_mask = resize_bilinear(mask, s, s);
    const auto pyr = encode(enc_img, enc_mask, model.weights);
    PreparedModel pm;
    pm.params = unpack_decoder_params(pyr, model.weights);
    pm.params.validate_shapes(model.cfg.embedding);
    pm.mats = materialize_decoder(pm.params, false);
    return pm;
}

// Clamp the decoded rgb, then blend against the input background.
void assemble_pixels(Image& out, const Image& input, const Mask& mask,
                     const std::int64_t* idx, const float* rgb, std::size_t n, bool blend) {
    for (std::size_t q = 0; q < n; ++q) {
        const std::size_t p = std::size_t(idx[q]);
        const float m = blend ? mask.data[p] : 1.f;
        for (int c = 0; c < 3; ++c) {
            const float d = std::clamp(rgb[q * 3 + c], 0.f, 1.f);
            out.data[p * 3 + c] = m * d + (1.f - m) * input.data[p * 3 + c];
        }
    }
}

Image run_tiled(const Image& img, const Mask& mask, const Model& model, const TilePlan& plan,
                bool blend, HarmonizeInfo* info) {
    const PreparedModel pm = prepare(img, mask, model);
    LevelSet set = build_levels(img, mask, model.cfg, /*with_fine_indices=*/false);

    QueryStats stats;
    std::vector<QueryLevel> coarse(set.levels.begin(), set.levels.end() - 1);
    FeatMapBox<float> box = compute_coarse_features<float>(pm.params, pm.mats, coarse,
                                                            model.cfg.embedding, &stats, nullptr);

    Image out(img.height, img.width);
    QueryLevel fine = set.levels.back();
    for (const auto& tile : plan.tiles) {
        fine.idx.resize(std::size_t(tile.rows) * img.width);
        const std::int64_t base = std::int64_t(tile.row0) * img.width;
        for (std::size_t k = 0; k < fine.idx.size(); ++k) fine.idx[k] = base + std::int64_t(k);
        Buffer<float> rgb = decode_fine<float>(pm.params, pm.mats, box, fine,
                                               model.cfg.embedding, &stats, nullptr);
        assemble_pixels(out, img, mask, fine.idx.data(), rgb.data(), fine.idx.size(), blend);
    }
    if (info) {
        info->stats = stats;
        info->pyramid_mode = set.pyramid;
    }
    return out;
}

}  // namespace

Image harmonize_tiled(const Image& img, const Mask& mask, const Model& model, const TilePlan& plan,
                      HarmonizeInfo* info) {
    return run_tiled(img, mask, model, plan, /*blend=*/true, info);
}

Image harmonize(const Image& img, const Mask& mask, const Model& model,
                const HarmonizeOptions& opts, HarmonizeInfo* info) {
    const bool resample = opts.target_h.has_value() || opts.target_w.has_value();
    if (resample) {
        const int th = opts.target_h.value_or(img.height);
        const int tw = opts.target_w.value_or(img.width);
        require(th >= 1 && tw >= 1, "harmonize: invalid target resolution");
        // The encoder consumes the native composite; the decoder is queried at
        // the target grid with resampled rgb/mask vector components.
        if (th != img.height || tw != img.width) {
            const Image at_target = resize_bilinear(img, th, tw);
            const Mask mask_target = resize_bilinear(mask, th, tw);
            HarmonizeOptions inner = opts;
            inner.target_h.reset();
            inner.target_w.reset();
            return harmonize(at_target, mask_target, model, inner, info);
        }
    }

    switch (opts.mode) {
        case HarmonizeMode::kRegion:
            return harmonize_region(img, mask, model, info);
        case HarmonizeMode::kLutOnly:
            return harmonize_lut_only(img, mask, model);
        case HarmonizeMode::kTiled:
            return run_tiled(img, mask, model, plan_tiles(img.height, img.width, opts.max_batch),
                             opts.blend_with_mask, info);
        case HarmonizeMode::kFull:
        default:
            return run_tiled(img, mask, model, plan_tiles_by_count(img.height, img.width, 1),
                             opts.blend_with_mask, info);
    }
}

Image harmonize_at_resolution(const Image& img, const Mask& mask, const Model& model, int target_h,
                              int target_w, HarmonizeInfo* info) {
    HarmonizeOptions opts;
    opts.target_h = target_h;
    opts.target_w = target_w;
    return harmonize(img, mask, model, opts, info);
}

Image harmonize_region(const Image& img, const Mask& mask, const Model& model,
                       HarmonizeInfo* info) {
    const PreparedModel pm = prepare(img, mask, model);
    LevelSet set = build_levels(img, mask, model.cfg, /*with_fine_indices=*/false);
    const int nb = model.cfg.decoder.num_blocks();

    // Foreground queries at the finest level.
    QueryLevel fine = set.levels.back();
    fine.idx.clear();
    const std::size_t pixels = img.pixel_count();
    for (std::size_t p = 0; p < pixels; ++p)
        if (mask.data[p] > kForegroundThreshold) fine.idx.push_back(std::int64_t(p));
    require(!fine.idx.empty(), "harmonize_region: empty foreground");

    // Coarse query sets: walk the upsample footprint back through the blocks.
    std::vector<QueryLevel> coarse(set.levels.begin(), set.levels.end() - 1);
    const std::vector<std::int64_t>* finer_idx = &fine.idx;
    int finer_h = fine.plane.scale_h, finer_w = fine.plane.scale_w;
    for (int b = nb - 2; b >= 0; --b) {
        QueryLevel& level = coarse[b];
        const int sh = level.plane.scale_h, sw = level.plane.scale_w;
        std::vector<char> needed(std::size_t(sh) * sw, 0);
        for (const auto id : *finer_idx) {
            const int row = int(id / finer_w);
            const int col = int(id % finer_w);
            // Footprint of the bilinear gather: up to 2x2 source pixels.
            const double sy =
                std::clamp((double(row) + 0.5) * sh / finer_h - 0.5, 0.0, double(sh - 1));
            const double sx =
                std::clamp((double(col) + 0.5) * sw / finer_w - 0.5, 0.0, double(sw - 1));
            const int y0 = int(sy), x0 = int(sx);
            const int y1 = std::min(y0 + 1, sh - 1), x1 = std::min(x0 + 1, sw - 1);
            needed[std::size_t(y0) * sw + x0] = 1;
            needed[std::size_t(y0) * sw + x1] = 1;
            needed[std::size_t(y1) * sw + x0] = 1;
            needed[std::size_t(y1) * sw + x1] = 1;
        }
        level.idx.clear();
        for (std::size_t p = 0; p < needed.size(); ++p)
            if (needed[p]) level.idx.push_back(std::int64_t(p));
        finer_idx = &level.idx;
        finer_h = sh;
        finer_w = sw;
    }

    QueryStats stats;
    FeatMapBox<float> box = compute_coarse_features<float>(pm.params, pm.mats, coarse,
                                                            model.cfg.embedding, &stats, nullptr);
    Buffer<float> rgb =
        decode_fine<float>(pm.params, pm.mats, box, fine, model.cfg.embedding, &stats, nullptr);

    Image out = img;  // background copied from the input
    assemble_pixels(out, img, mask, fine.idx.data(), rgb.data(), fine.idx.size(), /*blend=*/true);
    if (info) {
        info->stats = stats;
        info->pyramid_mode = set.pyramid;
    }
    return out;
}

Image harmonize_lut_only(const Image& img, const Mask& mask, const Model& model) {
    require(img.height == mask.height && img.width == mask.width,
            "harmonize_lut_only: image/mask dimension mismatch");
    Lut3D lut;
    if (model.lut_override) {
        lut = *model.lut_override;
    } else {
        lut = predict_lut(img, mask, model);
    }
    return clamp01(lut_apply_foreground(lut, img, mask));
}

Lut3D predict_lut(const Image& img, const Mask& mask, const Model& model) {
    validate(model.cfg);
    require(model.cfg.encoder.lut_head, "predict_lut: model has no LUT head");
    const int s = model.cfg.encoder.input_size;
    const Image enc_img = resize_bilinear(img, s, s);
    const Mask enc_mask = resize_bilinear(mask, s, s);
    const auto pyr = encode(enc_img, enc_mask, model.weights);
    const auto params = unpack_decoder_params(pyr, model.weights);
    return params.lut();
}

std::vector<Image> harmonize_video_lut(const std::vector<Image>& frames,
                                       const std::vector<Mask>& masks, const Model& model,
                                       int keyframe_interval) {
    require(!frames.empty(), "harmonize_video_lut: empty input");
    require(frames.size() == masks.size(), "harmonize_video_lut: frame/mask count mismatch");
    require(keyframe_interval >= 1, "harmonize_video_lut: keyframe interval must be >= 1");

    const int n = int(frames.size());
    std::vector<int> keys;
    for (int f = 0; f < n; f += keyframe_interval) keys.push_back(f);
    if (keys.back() != n - 1) keys.push_back(n - 1);

    std::vector<Lut3D> key_luts(keys.size());
    for (std::size_t k = 0; k < keys.size(); ++k)
        key_luts[k] = predict_lut(frames[keys[k]], masks[keys[k]], model);

    std::vector<Image> out;
    out.reserve(n);
    std::size_t seg = 0;
    for (int f = 0; f < n; ++f) {
        while (seg + 1 < keys.size() && f > keys[seg + 1]) ++seg;
        Lut3D lut;
        if (f == keys[seg]) {
            lut = key_luts[seg];
        } else if (seg + 1 < keys.size() && f == keys[seg + 1]) {
            lut = key_luts[seg + 1];
        } else {
            lut = lut_interp(key_luts[seg], key_luts[seg + 1], f, keys[seg], keys[seg + 1]);
        }
        out.push_back(clamp01(lut_apply_foreground(lut, frames[f], masks[f])));
    }
    return out;
}

}  // namespace hinet
