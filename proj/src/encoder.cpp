#include "hinet/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hinet/common.hpp"
#include "hinet/kernels.hpp"

namespace hinet {

void validate(const ModelConfig& cfg) {
    validate(cfg.decoder, cfg.embedding);
    require(cfg.encoder.input_size >= 16 && cfg.encoder.input_size % 16 == 0,
            "EncoderConfig: input_size must be a positive multiple of 16");
    for (int c : cfg.encoder.stage_channels)
        require(c >= 1, "EncoderConfig: stage channels must be >= 1");
    require(cfg.decoder.num_blocks() <= 3,
            "ModelConfig: at most 3 decoder blocks (stages 1-3 feed the content grids)");
    if (cfg.encoder.lut_head) require(cfg.encoder.lut_dim >= 2, "EncoderConfig: lut_dim must be >= 2");
    for (int b = 0; b < cfg.decoder.num_blocks(); ++b) {
        const int s = cfg.encoder.stage_size(b);
        require(cfg.decoder.grid_sizes[b].first <= s && cfg.decoder.grid_sizes[b].second <= s,
                "ModelConfig: block grid larger than its encoder stage");
    }
}

std::size_t head_output_dim(const ModelConfig& cfg, int block) {
    return block_modulation_count(cfg.decoder, cfg.embedding, block);
}

// ---------------------------------------------------------------------------
// Weights

template <typename T>
std::vector<typename ModelWeights<T>::TensorRef> ModelWeights<T>::registry() {
    std::vector<TensorRef> refs;
    auto add = [&refs](const std::string& name, std::vector<T>& v, std::vector<int> shape) {
        if (!v.empty()) refs.push_back({name, v.data(), v.size(), std::move(shape)});
    };
    for (int s = 0; s < 4; ++s) {
        add("enc.conv" + std::to_string(s) + ".w", convs[s].w,
            {convs[s].out_ch, convs[s].in_ch, 3, 3});
        add("enc.conv" + std::to_string(s) + ".b", convs[s].b, {convs[s].out_ch});
    }
    auto add_dense = [&add](const std::string& name, Dense<T>& d) {
        add(name + ".w", d.w, {d.out_dim, d.in_dim});
        add(name + ".b", d.b, {d.out_dim});
    };
    for (std::size_t b = 0; b < block_heads.size(); ++b)
        add_dense("head.block" + std::to_string(b), block_heads[b]);
    add_dense("head.app", app_head);
    add_dense("head.lut", lut_head);
    auto base_shape = [this](const MlpArch& arch, std::size_t l) {
        return std::vector<int>{arch.layers[l].out_dim, arch.layers[l].in_dim};
    };
    for (std::size_t b = 0; b < block_bases.size(); ++b) {
        const auto arch = block_arch(cfg.decoder, cfg.embedding, int(b));
        for (std::size_t l = 0; l < block_bases[b].size(); ++l)
            add("base.block" + std::to_string(b) + ".l" + std::to_string(l), block_bases[b][l],
                base_shape(arch, l));
    }
    const auto aarch = app_arch(cfg.decoder);
    for (std::size_t l = 0; l < app_bases.size(); ++l)
        add("base.app.l" + std::to_string(l), app_bases[l], base_shape(aarch, l));
    return refs;
}

template <typename T>
std::size_t ModelWeights<T>::parameter_count() const {
    std::size_t total = 0;
    auto* self = const_cast<ModelWeights<T>*>(this);
    for (const auto& ref : self->registry()) total += ref.size;
    return total;
}

namespace {

template <typename T>
void head_bias_defaults(const MlpArch& arch, int rank, std::vector<T>& bias) {
    // Start every cell's modulation product near one: mod_a = 1, mod_b = 1/r.
    visit_modulation_layout(arch, rank, [&](std::size_t, ModSlice kind, std::size_t off, std::size_t n) {
        const T v = kind == ModSlice::kModA   ? T(1)
                    : kind == ModSlice::kModB ? T(1) / T(rank)
                                              : T(0);
        for (std::size_t k = 0; k < n; ++k) bias[off + k] = v;
    });
}

template <typename T>
void allocate_weights(const ModelConfig& cfg, ModelWeights<T>& w) {
    w.cfg = cfg;
    int in_ch = 4;
    for (int s = 0; s < 4; ++s) {
        auto& c = w.convs[s];
        c.in_ch = in_ch;
        c.out_ch = cfg.encoder.stage_channels[s];
        c.w.assign(std::size_t(c.out_ch) * in_ch * 9, T(0));
        c.b.assign(c.out_ch, T(0));
        in_ch = c.out_ch;
    }
    const int nb = cfg.decoder.num_blocks();
    w.block_heads.resize(nb);
    w.block_bases.resize(nb);
    for (int b = 0; b < nb; ++b) {
        auto& h = w.block_heads[b];
        h.in_dim = cfg.encoder.stage_channels[b];
        h.out_dim = int(head_output_dim(cfg, b));
        h.w.assign(std::size_t(h.out_dim) * h.in_dim, T(0));
        h.b.assign(h.out_dim, T(0));
        const auto arch = block_arch(cfg.decoder, cfg.embedding, b);
        w.block_bases[b].resize(arch.layers.size());
        for (std::size_t l = 0; l < arch.layers.size(); ++l)
            w.block_bases[b][l].assign(
                std::size_t(arch.layers[l].out_dim) * arch.layers[l].in_dim, T(0));
    }
    const auto aarch = app_arch(cfg.decoder);
    w.app_head.in_dim = cfg.encoder.stage_channels[3];
    w.app_head.out_dim = int(app_modulation_count(cfg.decoder, cfg.embedding));
    w.app_head.w.assign(std::size_t(w.app_head.out_dim) * w.app_head.in_dim, T(0));
    w.app_head.b.assign(w.app_head.out_dim, T(0));
    w.app_bases.resize(aarch.layers.size());
    for (std::size_t l = 0; l < aarch.layers.size(); ++l)
        w.app_bases[l].assign(std::size_t(aarch.layers[l].out_dim) * aarch.layers[l].in_dim, T(0));
    if (cfg.encoder.lut_head) {
        const int d = cfg.encoder.lut_dim;
        w.lut_head.in_dim = cfg.encoder.stage_channels[3];
        w.lut_head.out_dim = d * d * d * 3;
        w.lut_head.w.assign(std::size_t(w.lut_head.out_dim) * w.lut_head.in_dim, T(0));
        w.lut_head.b.assign(w.lut_head.out_dim, T(0));
    }
}

}  // namespace

template <typename T>
ModelWeights<T> zero_weights(const ModelConfig& cfg) {
    validate(cfg);
    ModelWeights<T> w;
    allocate_weights(cfg, w);
    return w;
}

template <typename T>
ModelWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    ModelWeights<T> w = zero_weights<T>(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (auto& c : w.convs) {
        const double std_dev = std::sqrt(2.0 / double(c.in_ch * 9));
        for (auto& v : c.w) v = T(normal(rng) * std_dev);
    }
    auto init_head = [&](Dense<T>& h) {
        if (h.w.empty()) return;
        const double std_dev = 0.02 / std::sqrt(double(h.in_dim));
        for (auto& v : h.w) v = T(normal(rng) * std_dev);
    };
    for (int b = 0; b < cfg.decoder.num_blocks(); ++b) {
        init_head(w.block_heads[b]);
        head_bias_defaults(block_arch(cfg.decoder, cfg.embedding, b), cfg.decoder.fmm_rank,
                           w.block_heads[b].b);
        const auto arch = block_arch(cfg.decoder, cfg.embedding, b);
        for (std::size_t l = 0; l < arch.layers.size(); ++l) {
            const double std_dev = std::sqrt(2.0 / double(arch.layers[l].in_dim));
            for (auto& v : w.block_bases[b][l]) v = T(normal(rng) * std_dev);
        }
    }
    init_head(w.app_head);
    head_bias_defaults(app_arch(cfg.decoder), cfg.decoder.fmm_rank, w.app_head.b);
    const auto aarch = app_arch(cfg.decoder);
    for (std::size_t l = 0; l < aarch.layers.size(); ++l) {
        const double std_dev = std::sqrt(2.0 / double(aarch.layers[l].in_dim));
        for (auto& v : w.app_bases[l]) v = T(normal(rng) * std_dev);
    }
    // LUT head stays zero: the predicted lattice starts as the exact identity.
    return w;
}

template <typename U, typename T>
ModelWeights<U> cast_weights(const ModelWeights<T>& src) {
    ModelWeights<U> dst = zero_weights<U>(src.cfg);
    auto* s = const_cast<ModelWeights<T>*>(&src);
    auto srefs = s->registry();
    auto drefs = dst.registry();
    require(srefs.size() == drefs.size(), "cast_weights: registry mismatch");
    for (std::size_t r = 0; r < srefs.size(); ++r) {
        require(srefs[r].size == drefs[r].size && srefs[r].name == drefs[r].name,
                "cast_weights: tensor mismatch");
        for (std::size_t k = 0; k < srefs[r].size; ++k) drefs[r].data[k] = U(srefs[r].data[k]);
    }
    return dst;
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;
template ModelWeights<float> init_weights<float>(const ModelConfig&, std::uint64_t);
template ModelWeights<double> init_weights<double>(const ModelConfig&, std::uint64_t);
template ModelWeights<float> zero_weights<float>(const ModelConfig&);
template ModelWeights<double> zero_weights<double>(const ModelConfig&);
template ModelWeights<float> cast_weights<float, double>(const ModelWeights<double>&);
template ModelWeights<double> cast_weights<double, float>(const ModelWeights<float>&);
template ModelWeights<float> cast_weights<float, float>(const ModelWeights<float>&);
template ModelWeights<double> cast_weights<double, double>(const ModelWeights<double>&);

// ---------------------------------------------------------------------------
// Convolution stages (im2col + batched affine)

namespace {

// Patch layout: p = ci*9 + ky*3 + kx, matching conv weight [co][ci][ky][kx].
template <typename T>
void im2col_stride2(const T* in, int h, int w, int ch, Buffer<T>& patches, int oh, int ow) {
    const int pd = ch * 9;
    parallel_for(std::size_t(oh), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t i = r0; i < r1; ++i) {
            for (int j = 0; j < ow; ++j) {
                T* p = patches.data() + (i * ow + j) * pd;
                for (int ci = 0; ci < ch; ++ci)
                    for (int ky = 0; ky < 3; ++ky) {
                        const int y = int(2 * i) + ky - 1;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int x = 2 * j + kx - 1;
                            p[ci * 9 + ky * 3 + kx] =
                                (y >= 0 && y < h && x >= 0 && x < w)
                                    ? in[(std::size_t(y) * w + x) * ch + ci]
                                    : T(0);
                        }
                    }
            }
        }
    });
}

template <typename T>
std::vector<T> transpose_dense(const std::vector<T>& w, int out_dim, int in_dim) {
    std::vector<T> wt(w.size());
    for (int o = 0; o < out_dim; ++o)
        for (int i = 0; i < in_dim; ++i) wt[std::size_t(i) * out_dim + o] = w[std::size_t(o) * in_dim + i];
    return wt;
}

}  // namespace

template <typename T>
FeaturePyramid<T> encode(const Image& img, const Mask& mask, const ModelWeights<T>& w,
                         EncodeTrace<T>* trace) {
    const int s = w.cfg.encoder.input_size;
    require(img.height == s && img.width == s && mask.height == s && mask.width == s,
            "encode: inputs must be exactly input_size square");

    Buffer<T> input(std::size_t(s) * s * 4, AllocClass::kTransient, "encode.input");
    for (std::size_t p = 0; p < std::size_t(s) * s; ++p) {
        input[p * 4 + 0] = T(img.data[p * 3 + 0]);
        input[p * 4 + 1] = T(img.data[p * 3 + 1]);
        input[p * 4 + 2] = T(img.data[p * 3 + 2]);
        input[p * 4 + 3] = T(mask.data[p]);
    }

    FeaturePyramid<T> pyr;
    const Buffer<T>* cur = &input;
    int ch = 4, hw = s;
    for (int stage = 0; stage < 4; ++stage) {
        const auto& conv = w.convs[stage];
        const int oh = hw / 2, ow = hw / 2;
        const std::size_t n = std::size_t(oh) * ow;
        Buffer<T> patches(n * ch * 9, AllocClass::kTransient, "encode.patches");
        im2col_stride2(cur->data(), hw, hw, ch, patches, oh, ow);

        auto& box = pyr.stages[stage];
        box.scale_h = oh;
        box.scale_w = ow;
        box.rows = oh;
        box.cols = ow;
        box.channels = conv.out_ch;
        box.data.reset(n * conv.out_ch, AllocClass::kTransient, "encode.stage");

        const auto wt = transpose_dense(conv.w, conv.out_ch, ch * 9);
        parallel_for(n, [&](std::size_t p0, std::size_t p1) {
            kernels::affine_batch(patches.data() + p0 * std::size_t(ch) * 9, wt.data(),
                                  conv.b.data(), box.data.data() + p0 * conv.out_ch, p1 - p0,
                                  std::size_t(ch) * 9, conv.out_ch);
        });
        if (trace) {
            trace->pre_act[stage] = box.data;  // copy before activation
            trace->patches[stage] = std::move(patches);
        }
        kernels::leaky_relu(box.data.data(), box.data.size(), T(kLeakySlope));

        cur = &box.data;
        ch = conv.out_ch;
        hw = oh;
    }
    return pyr;
}

template FeaturePyramid<float> encode(const Image&, const Mask&, const ModelWeights<float>&,
                                      EncodeTrace<float>*);
template FeaturePyramid<double> encode(const Image&, const Mask&, const ModelWeights<double>&,
                                       EncodeTrace<double>*);

// ---------------------------------------------------------------------------
// Pooling and unpacking

template <typename T>
FeatMapBox<T> pool_to_grid(const FeatMapBox<T>& feat, int grid_h, int grid_w) {
    require(grid_h >= 1 && grid_w >= 1, "pool_to_grid: invalid grid");
    require(grid_h <= feat.rows && grid_w <= feat.cols, "pool_to_grid: grid larger than stage");
    const int ch = feat.channels;
    FeatMapBox<T> out;
    out.scale_h = grid_h;
    out.scale_w = grid_w;
    out.rows = grid_h;
    out.cols = grid_w;
    out.channels = ch;
    out.data.reset(std::size_t(grid_h) * grid_w * ch, AllocClass::kTransient, "pooled");
    for (int gi = 0; gi < grid_h; ++gi) {
        const int r0 = gi * feat.rows / grid_h;
        const int r1 = (gi + 1) * feat.rows / grid_h;
        for (int gj = 0; gj < grid_w; ++gj) {
            const int c0 = gj * feat.cols / grid_w;
            const int c1 = (gj + 1) * feat.cols / grid_w;
            T* dst = out.data.data() + (std::size_t(gi) * grid_w + gj) * ch;
            for (int i = r0; i < r1; ++i)
                for (int j = c0; j < c1; ++j) {
                    const T* src = feat.data.data() + (std::size_t(i) * feat.cols + j) * ch;
                    for (int c = 0; c < ch; ++c) dst[c] += src[c];
                }
            const T inv = T(1) / T((r1 - r0) * (c1 - c0));
            for (int c = 0; c < ch; ++c) dst[c] *= inv;
        }
    }
    return out;
}

template FeatMapBox<float> pool_to_grid(const FeatMapBox<float>&, int, int);
template FeatMapBox<double> pool_to_grid(const FeatMapBox<double>&, int, int);

template <typename T>
std::vector<T> global_average(const FeatMapBox<T>& feat) {
    std::vector<T> out(feat.channels, T(0));
    const std::size_t n = std::size_t(feat.rows) * feat.cols;
    for (std::size_t p = 0; p < n; ++p)
        for (int c = 0; c < feat.channels; ++c) out[c] += feat.data[p * feat.channels + c];
    for (auto& v : out) v /= T(n);
    return out;
}

template std::vector<float> global_average(const FeatMapBox<float>&);
template std::vector<double> global_average(const FeatMapBox<double>&);

template <typename T>
DecoderParams<T> unpack_decoder_params(const FeaturePyramid<T>& pyr, const ModelWeights<T>& w,
                                       UnpackTrace<T>* trace) {
    const ModelConfig& cfg = w.cfg;
    DecoderParams<T> params;
    params.cfg = cfg.decoder;
    const int nb = cfg.decoder.num_blocks();
    params.blocks.resize(nb);
    if (trace) trace->pooled.resize(nb);

    for (int b = 0; b < nb; ++b) {
        auto& grid = params.blocks[b];
        grid.grid_h = cfg.decoder.grid_sizes[b].first;
        grid.grid_w = cfg.decoder.grid_sizes[b].second;
        grid.rank = cfg.decoder.fmm_rank;
        grid.arch = block_arch(cfg.decoder, cfg.embedding, b);
        grid.leaky_slope = T(kLeakySlope);
        grid.allocate();
        for (std::size_t l = 0; l < grid.arch.layers.size(); ++l) grid.bases[l] = w.block_bases[b][l];

        const auto pooled = pool_to_grid(pyr.stages[b], grid.grid_h, grid.grid_w);
        const std::size_t cells = std::size_t(grid.cell_count());
        const auto& head = w.block_heads[b];
        Buffer<T> mods(cells * head.out_dim, AllocClass::kTransient, "unpack.mods");
        const auto wt = transpose_dense(head.w, head.out_dim, head.in_dim);
        kernels::affine_batch(pooled.data.data(), wt.data(), head.b.data(), mods.data(), cells,
                              head.in_dim, head.out_dim);
        visit_modulation_layout(
            grid.arch, grid.rank,
            [&](std::size_t l, ModSlice kind, std::size_t off, std::size_t len) {
                auto& dst = kind == ModSlice::kModA   ? grid.cell_mod_a[l]
                            : kind == ModSlice::kModB ? grid.cell_mod_b[l]
                                                      : grid.cell_bias[l];
                for (std::size_t c = 0; c < cells; ++c)
                    for (std::size_t k = 0; k < len; ++k)
                        dst[c * len + k] = mods[c * head.out_dim + off + k];
            });
        if (trace) {
            trace->pooled[b].reset(pooled.data.size(), AllocClass::kTransient, "unpack.pooled");
            for (std::size_t k = 0; k < pooled.data.size(); ++k) trace->pooled[b][k] = pooled.data[k];
        }
    }

    // Appearance MLP and optional LUT from the deepest stage.
    const auto gfeat = global_average(pyr.stages[3]);
    if (trace) trace->global_feat = gfeat;
    const auto aarch = app_arch(cfg.decoder);
    std::vector<T> app_mods(w.app_head.out_dim);
    {
        const auto wt = transpose_dense(w.app_head.w, w.app_head.out_dim, w.app_head.in_dim);
        kernels::affine_batch(gfeat.data(), wt.data(), w.app_head.b.data(), app_mods.data(), 1,
                              w.app_head.in_dim, w.app_head.out_dim);
    }
    params.app.leaky_slope = T(kLeakySlope);
    params.app.layers.clear();
    visit_modulation_layout(aarch, cfg.decoder.fmm_rank,
                            [&](std::size_t l, ModSlice kind, std::size_t off, std::size_t len) {
                                if (params.app.layers.size() <= l) {
                                    MlpLayerParams<T> layer;
                                    layer.in_dim = aarch.layers[l].in_dim;
                                    layer.out_dim = aarch.layers[l].out_dim;
                                    layer.rank = cfg.decoder.fmm_rank;
                                    layer.base = w.app_bases[l];
                                    params.app.layers.push_back(std::move(layer));
                                }
                                auto& layer = params.app.layers[l];
                                auto& dst = kind == ModSlice::kModA   ? layer.mod_a
                                            : kind == ModSlice::kModB ? layer.mod_b
                                                                      : layer.bias;
                                dst.assign(app_mods.begin() + off, app_mods.begin() + off + len);
                            });

    if (cfg.encoder.lut_head) {
        const int d = cfg.encoder.lut_dim;
        params.lut_dim = d;
        params.lut_lattice.resize(std::size_t(d) * d * d * 3);
        std::vector<T> residual(w.lut_head.out_dim);
        const auto wt = transpose_dense(w.lut_head.w, w.lut_head.out_dim, w.lut_head.in_dim);
        kernels::affine_batch(gfeat.data(), wt.data(), w.lut_head.b.data(), residual.data(), 1,
                              w.lut_head.in_dim, w.lut_head.out_dim);
        const Lut3D identity = lut_identity(d);
        for (std::size_t k = 0; k < params.lut_lattice.size(); ++k)
            params.lut_lattice[k] = T(identity.lattice[k]) + residual[k];
    }
    return params;
}

template DecoderParams<float> unpack_decoder_params(const FeaturePyramid<float>&,
                                                    const ModelWeights<float>&,
                                                    UnpackTrace<float>*);
template DecoderParams<double> unpack_decoder_params(const FeaturePyramid<double>&,
                                                     const ModelWeights<double>&,
                                                     UnpackTrace<double>*);

}  // namespace hinet
