#include "hinet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hinet/common.hpp"
#include "hinet/kernels.hpp"
#include "hinet/metrics.hpp"

namespace hinet {

// ---------------------------------------------------------------------------
// Sample preparation and Random Step Crop

namespace {

Image crop_image(const Image& src, int row0, int col0, int rows, int cols) {
    Image out(rows, cols);
    for (int i = 0; i < rows; ++i)
        std::memcpy(out.data.data() + std::size_t(i) * cols * 3,
                    src.data.data() + (std::size_t(row0 + i) * src.width + col0) * 3,
                    std::size_t(cols) * 3 * sizeof(float));
    return out;
}

Mask crop_mask(const Mask& src, int row0, int col0, int rows, int cols) {
    Mask out(rows, cols);
    for (int i = 0; i < rows; ++i)
        std::memcpy(out.data.data() + std::size_t(i) * cols,
                    src.data.data() + std::size_t(row0 + i) * src.width + col0,
                    std::size_t(cols) * sizeof(float));
    return out;
}

}  // namespace

PreparedSample prepare_sample(const TrainSample& sample, const ModelConfig& cfg) {
    require(sample.composite.height == sample.mask.height &&
                sample.composite.width == sample.mask.width &&
                sample.composite.height == sample.target.height &&
                sample.composite.width == sample.target.width,
            "prepare_sample: dimension mismatch");
    PreparedSample out;
    out.height = sample.composite.height;
    out.width = sample.composite.width;
    const int nb = cfg.decoder.num_blocks();
    out.plane_imgs.reserve(nb);
    out.plane_masks.reserve(nb);
    for (int b = 0; b < nb; ++b) {
        const int s = cfg.decoder.block_scales[b];
        if (s == 1) {
            out.plane_imgs.push_back(sample.composite);
            out.plane_masks.push_back(sample.mask);
        } else {
            const int sh = (out.height + s - 1) / s, sw = (out.width + s - 1) / s;
            out.plane_imgs.push_back(resize_bilinear(sample.composite, sh, sw));
            out.plane_masks.push_back(resize_bilinear(sample.mask, sh, sw));
        }
    }
    out.target = sample.target;
    const int es = cfg.encoder.input_size;
    out.enc_img = resize_bilinear(sample.composite, es, es);
    out.enc_mask = resize_bilinear(sample.mask, es, es);
    return out;
}

Image RscCrop::Plane::interior() const {
    return crop_image(img, interior_row0 - row0, interior_col0 - col0, interior_rows,
                      interior_cols);
}

RscCrop rsc_crop_at(const PreparedSample& sample, const ModelConfig& cfg, int corner_row,
                    int corner_col, int crop_size) {
    const int h = sample.height, w = sample.width;
    require(crop_size >= 1 && crop_size <= h && crop_size <= w,
            "rsc_crop: image smaller than crop");
    require(corner_row >= 0 && corner_col >= 0 && corner_row + crop_size <= h &&
                corner_col + crop_size <= w,
            "rsc_crop: corner out of range");
    const int nb = cfg.decoder.num_blocks();
    RscCrop crop;
    crop.corner_row = corner_row;
    crop.corner_col = corner_col;
    crop.planes.resize(nb);
    for (int b = 0; b < nb; ++b) {
        const int s = cfg.decoder.block_scales[b];
        require(corner_row % s == 0 && corner_col % s == 0 && crop_size % s == 0,
                "rsc_crop: corner/crop not aligned to block scale");
        auto& plane = crop.planes[b];
        plane.scale_h = (h + s - 1) / s;
        plane.scale_w = (w + s - 1) / s;
        plane.interior_row0 = corner_row / s;
        plane.interior_col0 = corner_col / s;
        plane.interior_rows = crop_size / s;
        plane.interior_cols = crop_size / s;
        const int halo = (b == nb - 1) ? 0 : kRscHalo;
        plane.row0 = std::max(plane.interior_row0 - halo, 0);
        plane.col0 = std::max(plane.interior_col0 - halo, 0);
        const int row1 = std::min(plane.interior_row0 + plane.interior_rows + halo, plane.scale_h);
        const int col1 = std::min(plane.interior_col0 + plane.interior_cols + halo, plane.scale_w);
        plane.img = crop_image(sample.plane_imgs[b], plane.row0, plane.col0, row1 - plane.row0,
                               col1 - plane.col0);
        plane.mask = crop_mask(sample.plane_masks[b], plane.row0, plane.col0, row1 - plane.row0,
                               col1 - plane.col0);
    }
    crop.target = crop_image(sample.target, corner_row, corner_col, crop_size, crop_size);
    return crop;
}

RscCrop rsc_crop(const PreparedSample& sample, const ModelConfig& cfg, const RscConfig& rsc,
                 std::mt19937_64& rng) {
    require(rsc.crop_size % rsc.stride_multiple == 0,
            "rsc_crop: crop_size not divisible by stride_multiple");
    require(rsc.stride_multiple % cfg.decoder.max_scale() == 0,
            "rsc_crop: stride_multiple must align with the coarsest block scale");
    const int h = sample.height, w = sample.width;
    require(h >= rsc.crop_size && w >= rsc.crop_size, "rsc_crop: image smaller than crop");
    const int max_row = (h - rsc.crop_size) / rsc.stride_multiple;
    const int max_col = (w - rsc.crop_size) / rsc.stride_multiple;
    std::uniform_int_distribution<int> row_dist(0, max_row), col_dist(0, max_col);
    const int r = row_dist(rng) * rsc.stride_multiple;
    const int c = col_dist(rng) * rsc.stride_multiple;
    return rsc_crop_at(sample, cfg, r, c, rsc.crop_size);
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename T>
LocalMLPGrid<T> app_as_grid(const MlpParams<T>& app) {
    LocalMLPGrid<T> g;
    g.grid_h = g.grid_w = 1;
    g.rank = app.layers.empty() ? 1 : app.layers.front().rank;
    g.leaky_slope = app.leaky_slope;
    for (const auto& layer : app.layers) {
        g.arch.layers.push_back({layer.in_dim, layer.out_dim});
        g.bases.push_back(layer.base);
        g.cell_mod_a.push_back(layer.mod_a);
        g.cell_mod_b.push_back(layer.mod_b);
        g.cell_bias.push_back(layer.bias);
    }
    return g;
}

std::vector<QueryLevel> crop_levels(const RscCrop& crop) {
    std::vector<QueryLevel> levels(crop.planes.size());
    for (std::size_t b = 0; b < crop.planes.size(); ++b) {
        const auto& plane = crop.planes[b];
        auto& level = levels[b];
        level.plane = PlaneView{&plane.img, &plane.mask, plane.scale_h, plane.scale_w, plane.row0,
                                plane.col0};
        const bool fine = (b + 1 == crop.planes.size());
        const int r0 = fine ? plane.interior_row0 : plane.row0;
        const int c0 = fine ? plane.interior_col0 : plane.col0;
        const int rows = fine ? plane.interior_rows : plane.img.height;
        const int cols = fine ? plane.interior_cols : plane.img.width;
        level.idx.reserve(std::size_t(rows) * cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                level.idx.push_back(std::int64_t(r0 + i) * plane.scale_w + (c0 + j));
    }
    return levels;
}

template <typename T>
void gather_target(const RscCrop& crop, const std::vector<std::int64_t>& idx, Buffer<T>& out) {
    const auto& plane = crop.planes.back();
    out.reset(idx.size() * 3, AllocClass::kTransient, "train.target");
    for (std::size_t q = 0; q < idx.size(); ++q) {
        const int row = int(idx[q] / plane.scale_w) - plane.interior_row0;
        const int col = int(idx[q] % plane.scale_w) - plane.interior_col0;
        for (int c = 0; c < 3; ++c) out[q * 3 + c] = T(crop.target.at(row, col, c));
    }
}

}  // namespace

template <typename T>
T forward_loss(const ModelWeights<T>& w, const PreparedSample& sample, const RscCrop& crop,
               const LossConfig& loss_cfg, TrainMode mode, GraphState<T>* state) {
    GraphState<T> local;
    GraphState<T>& st = state ? *state : local;

    const auto pyr = encode(sample.enc_img, sample.enc_mask, w, &st.enc);
    st.params = unpack_decoder_params(pyr, w, &st.unpack);
    st.levels = crop_levels(crop);

    if (mode == TrainMode::kDecoder) {
        st.app_grid = app_as_grid(st.params.app);
        st.mats.blocks.clear();
        for (const auto& g : st.params.blocks)
            st.mats.blocks.push_back(materialize_block(g, /*for_training=*/true));
        st.mats.app = materialize_block(st.app_grid, /*for_training=*/true);

        std::vector<QueryLevel> coarse(st.levels.begin(), st.levels.end() - 1);
        FeatMapBox<T> box = compute_coarse_features(st.params, st.mats, coarse,
                                                    w.cfg.embedding, nullptr, &st.decode);
        st.pred = decode_fine(st.params, st.mats, box, st.levels.back(), w.cfg.embedding, nullptr,
                              &st.decode);
        st.supervised_idx = st.levels.back().idx;
    } else {
        require(st.params.has_lut(), "forward_loss: LUT mode requires a LUT head");
        const auto& fine = st.levels.back();
        const auto& plane = crop.planes.back();
        st.supervised_idx.clear();
        st.taps.clear();
        for (const auto id : fine.idx) {
            const int row = int(id / plane.scale_w) - plane.row0;
            const int col = int(id % plane.scale_w) - plane.col0;
            if (plane.mask.at(row, col) > kForegroundThreshold) {
                st.supervised_idx.push_back(id);
                st.taps.push_back(lut_taps(st.params.lut_dim, plane.img.at(row, col, 0),
                                           plane.img.at(row, col, 1), plane.img.at(row, col, 2)));
            }
        }
        require(!st.supervised_idx.empty(), "forward_loss: empty foreground in LUT mode");
        const int d = st.params.lut_dim;
        st.pred.reset(st.supervised_idx.size() * 3, AllocClass::kTransient, "train.lutpred");
        for (std::size_t q = 0; q < st.supervised_idx.size(); ++q) {
            const auto& t = st.taps[q];
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int corner = 0; corner < 8; ++corner) {
                    const int ir = t.i0 + ((corner >> 2) & 1);
                    const int ig = t.j0 + ((corner >> 1) & 1);
                    const int ib = t.k0 + (corner & 1);
                    acc += t.w[corner] *
                           double(st.params.lut_lattice[((std::size_t(ir) * d + ig) * d + ib) * 3 + c]);
                }
                st.pred[q * 3 + c] = T(acc);
            }
        }
    }

    gather_target(crop, st.supervised_idx, st.target_v);
    const std::size_t n = st.pred.size();
    require(n == st.target_v.size() && n > 0, "forward_loss: batch shape mismatch");
    double acc = 0.0;  // double accumulation keeps the mean stable in float mode
    for (std::size_t k = 0; k < n; ++k) {
        const double d = double(st.pred[k]) - double(st.target_v[k]);
        acc += d * d;
    }
    st.loss_main = T(acc / double(n));

    st.penalty = T(0);
    if (st.params.has_lut()) {
        double p = 0.0;
        for (const T v : st.params.lut_lattice) {
            const double over = std::max(0.0, double(v) - 1.0);
            const double under = std::max(0.0, -double(v));
            p += over * over + under * under;
        }
        st.penalty = T(p / double(st.params.lut_lattice.size()));
    }
    st.loss = st.loss_main + T(loss_cfg.lambda_lut) * st.penalty;
    require(std::isfinite(double(st.loss)), "forward_loss: non-finite loss");
    return st.loss;
}

template float forward_loss(const ModelWeights<float>&, const PreparedSample&, const RscCrop&,
                            const LossConfig&, TrainMode, GraphState<float>*);
template double forward_loss(const ModelWeights<double>&, const PreparedSample&, const RscCrop&,
                             const LossConfig&, TrainMode, GraphState<double>*);

// ---------------------------------------------------------------------------
// Backward

namespace {

// Reverse of one block run. d_out is in query order; d_input (optional) is
// written in query order. Modulation and base gradients accumulate into the
// given containers (shaped like the grid's blobs).
template <typename T>
void block_backward(const MaterializedBlock<T>& mat, const LocalMLPGrid<T>& grid,
                    const BlockTrace<T>& trace, const T* d_out_query, std::size_t n,
                    std::vector<std::vector<T>>& d_bases, std::vector<std::vector<T>>& d_mod_a,
                    std::vector<std::vector<T>>& d_mod_b, std::vector<std::vector<T>>& d_bias,
                    T* d_input_query) {
    const std::size_t layers = mat.arch.layers.size();
    const int out_last = mat.arch.output_dim();
    const int cells = mat.cell_count();
    const int rank = grid.rank;

    // d_act holds the gradient w.r.t. the current layer's pre-activation, in
    // cell order; the final layer is linear so it starts as reordered d_out.
    Buffer<T> d_act(n * out_last, AllocClass::kTransient, "bwd.dact");
    for (std::size_t k = 0; k < n; ++k)
        std::memcpy(d_act.data() + k * out_last,
                    d_out_query + std::size_t(trace.order[k]) * out_last,
                    std::size_t(out_last) * sizeof(T));

    Buffer<T> input_l;  // recomputed layer input (cell order)
    Buffer<T> d_in;
    std::vector<T> dw_scratch;
    for (int l = int(layers) - 1; l >= 0; --l) {
        const int in = mat.arch.layers[l].in_dim;
        const int od = mat.arch.layers[l].out_dim;
        // Layer input: gathered input for layer 0, leaky(pre) otherwise.
        if (l == 0) {
            input_l = trace.input;
        } else {
            input_l = trace.pre_act[l - 1];
            kernels::leaky_relu(input_l.data(), input_l.size(), mat.leaky_slope);
        }
        d_in.reset(n * in, AllocClass::kTransient, "bwd.din");
        dw_scratch.assign(std::size_t(od) * in, T(0));
        std::vector<T> zero_bias(in, T(0));

        for (int c = 0; c < cells; ++c) {
            const std::size_t b0 = std::size_t(trace.cell_offset[c]);
            const std::size_t b1 = std::size_t(trace.cell_offset[c + 1]);
            if (b0 == b1) continue;
            const std::size_t rows = b1 - b0;
            const T* dy = d_act.data() + b0 * od;
            const T* x = input_l.data() + b0 * in;

            std::fill(dw_scratch.begin(), dw_scratch.end(), T(0));
            kernels::matmul_acc(dy, x, dw_scratch.data(), rows, od, in);

            T* dbias = d_bias[l].data() + std::size_t(c) * od;
            for (std::size_t r = 0; r < rows; ++r)
                for (int o = 0; o < od; ++o) dbias[o] += dy[r * od + o];

            // Split dW into base and modulation-factor gradients.
            const T* base = grid.bases[l].data();
            const T* mod = mat.mod[l].data() + std::size_t(c) * od * in;
            const T* a = grid.cell_mod_a[l].data() + std::size_t(c) * od * rank;
            const T* b = grid.cell_mod_b[l].data() + std::size_t(c) * rank * in;
            T* da = d_mod_a[l].data() + std::size_t(c) * od * rank;
            T* db = d_mod_b[l].data() + std::size_t(c) * rank * in;
            T* dbase = d_bases[l].data();
            for (int o = 0; o < od; ++o)
                for (int i = 0; i < in; ++i) {
                    const T dw = dw_scratch[std::size_t(o) * in + i];
                    dbase[std::size_t(o) * in + i] += dw * mod[std::size_t(o) * in + i];
                    const T dm = dw * base[std::size_t(o) * in + i];
                    for (int k = 0; k < rank; ++k) {
                        da[o * rank + k] += dm * b[k * in + i];
                        db[k * in + i] += a[o * rank + k] * dm;
                    }
                }

            // d_input = d_pre * W (row-major weights act as the transposed
            // kernel operand).
            const T* w_cell = mat.w[l].data() + std::size_t(c) * od * in;
            kernels::affine_batch(dy, w_cell, zero_bias.data(), d_in.data() + b0 * in, rows, od,
                                  in);
        }

        if (l > 0) {
            kernels::leaky_relu_bwd(trace.pre_act[l - 1].data(), d_in.data(), d_in.size(),
                                    mat.leaky_slope);
            d_act = std::move(d_in);
        } else if (d_input_query) {
            for (std::size_t k = 0; k < n; ++k)
                std::memcpy(d_input_query + std::size_t(trace.order[k]) * in,
                            d_in.data() + k * in, std::size_t(in) * sizeof(T));
        }
    }
}

template <typename T>
struct GridGrads {
    std::vector<std::vector<T>> bases, mod_a, mod_b, bias;
    void allocate_like(const LocalMLPGrid<T>& g) {
        bases.resize(g.bases.size());
        mod_a.resize(g.bases.size());
        mod_b.resize(g.bases.size());
        bias.resize(g.bases.size());
        for (std::size_t l = 0; l < g.bases.size(); ++l) {
            bases[l].assign(g.bases[l].size(), T(0));
            mod_a[l].assign(g.cell_mod_a[l].size(), T(0));
            mod_b[l].assign(g.cell_mod_b[l].size(), T(0));
            bias[l].assign(g.cell_bias[l].size(), T(0));
        }
    }
};

// Packs per-cell modulation gradients into head-output order and pushes them
// through the linear head: accumulates head weight/bias gradients and returns
// the gradient w.r.t. the head's input features.
template <typename T>
std::vector<T> head_backward(const Dense<T>& head, const GridGrads<T>& gg, const MlpArch& arch,
                             int rank, int cells, const T* head_input, Dense<T>& d_head) {
    Buffer<T> d_out(std::size_t(cells) * head.out_dim, AllocClass::kTransient, "bwd.headout");
    visit_modulation_layout(arch, rank,
                            [&](std::size_t l, ModSlice kind, std::size_t off, std::size_t len) {
                                const auto& src = kind == ModSlice::kModA   ? gg.mod_a[l]
                                                  : kind == ModSlice::kModB ? gg.mod_b[l]
                                                                            : gg.bias[l];
                                for (int c = 0; c < cells; ++c)
                                    for (std::size_t k = 0; k < len; ++k)
                                        d_out[std::size_t(c) * head.out_dim + off + k] =
                                            src[std::size_t(c) * len + k];
                            });
    kernels::matmul_acc(d_out.data(), head_input, d_head.w.data(), cells, head.out_dim,
                        head.in_dim);
    for (int c = 0; c < cells; ++c)
        for (int o = 0; o < head.out_dim; ++o) d_head.b[o] += d_out[std::size_t(c) * head.out_dim + o];

    std::vector<T> d_input(std::size_t(cells) * head.in_dim);
    std::vector<T> zero_bias(head.in_dim, T(0));
    kernels::affine_batch(d_out.data(), head.w.data(), zero_bias.data(), d_input.data(), cells,
                          head.out_dim, head.in_dim);
    return d_input;
}

}  // namespace

template <typename T>
ModelWeights<T> backward(const ModelWeights<T>& w, const PreparedSample& sample,
                         const RscCrop& crop, const LossConfig& loss_cfg, TrainMode mode,
                         const GraphState<T>& state) {
    const ModelConfig& cfg = w.cfg;
    ModelWeights<T> grads = zero_weights<T>(cfg);
    const int nb = cfg.decoder.num_blocks();
    const std::size_t n = state.pred.size() / 3;

    // d loss / d pred
    Buffer<T> d_pred(n * 3, AllocClass::kTransient, "bwd.dpred");
    for (std::size_t k = 0; k < n * 3; ++k)
        d_pred[k] = T(2) * (state.pred[k] - state.target_v[k]) / T(n * 3);

    // LUT lattice gradient: overflow penalty plus (in LUT mode) the trilinear
    // application.
    std::vector<T> d_lattice;
    if (state.params.has_lut()) {
        const auto& lattice = state.params.lut_lattice;
        d_lattice.assign(lattice.size(), T(0));
        const T scale = T(loss_cfg.lambda_lut) * T(2) / T(lattice.size());
        for (std::size_t k = 0; k < lattice.size(); ++k) {
            if (lattice[k] > T(1)) d_lattice[k] += scale * (lattice[k] - T(1));
            if (lattice[k] < T(0)) d_lattice[k] += scale * lattice[k];
        }
        if (mode == TrainMode::kLutOnly) {
            const int d = state.params.lut_dim;
            for (std::size_t q = 0; q < n; ++q) {
                const auto& t = state.taps[q];
                for (int corner = 0; corner < 8; ++corner) {
                    const int ir = t.i0 + ((corner >> 2) & 1);
                    const int ig = t.j0 + ((corner >> 1) & 1);
                    const int ib = t.k0 + (corner & 1);
                    const std::size_t base = ((std::size_t(ir) * d + ig) * d + ib) * 3;
                    for (int c = 0; c < 3; ++c)
                        d_lattice[base + c] += T(t.w[corner]) * d_pred[q * 3 + c];
                }
            }
        }
    }

    // Gradients w.r.t. the deep-stage global feature, accumulated from the
    // appearance head and the LUT head.
    std::vector<T> d_gfeat(cfg.encoder.stage_channels[3], T(0));

    // Stage gradients (post-activation), accumulated from all heads.
    std::array<Buffer<T>, 4> d_stage;
    for (int s = 0; s < 4; ++s) {
        const int sz = cfg.encoder.stage_size(s);
        d_stage[s].reset(std::size_t(sz) * sz * cfg.encoder.stage_channels[s],
                         AllocClass::kTransient, "bwd.dstage");
    }

    if (mode == TrainMode::kDecoder) {
        // Appearance MLP backward.
        const auto& fine_trace = state.decode.blocks[nb - 1];
        const std::size_t n_fine = state.levels.back().idx.size();
        GridGrads<T> app_gg;
        app_gg.allocate_like(state.app_grid);
        Buffer<T> d_feats(n_fine * cfg.decoder.hidden_width, AllocClass::kTransient, "bwd.dfeats");
        block_backward(state.mats.app, state.app_grid, state.decode.app, d_pred.data(), n_fine,
                       app_gg.bases, app_gg.mod_a, app_gg.mod_b, app_gg.bias, d_feats.data());
        for (std::size_t l = 0; l < app_gg.bases.size(); ++l)
            for (std::size_t k = 0; k < app_gg.bases[l].size(); ++k)
                grads.app_bases[l][k] += app_gg.bases[l][k];
        {
            Dense<T> d_head;
            d_head.in_dim = w.app_head.in_dim;
            d_head.out_dim = w.app_head.out_dim;
            d_head.w.assign(w.app_head.w.size(), T(0));
            d_head.b.assign(w.app_head.b.size(), T(0));
            const auto d_in = head_backward(w.app_head, app_gg, app_arch(cfg.decoder),
                                            cfg.decoder.fmm_rank, 1,
                                            state.unpack.global_feat.data(), d_head);
            for (std::size_t k = 0; k < d_head.w.size(); ++k) grads.app_head.w[k] += d_head.w[k];
            for (std::size_t k = 0; k < d_head.b.size(); ++k) grads.app_head.b[k] += d_head.b[k];
            for (std::size_t k = 0; k < d_in.size(); ++k) d_gfeat[k] += d_in[k];
        }

        // Block chain backward, finest to coarsest.
        Buffer<T> d_block_out = std::move(d_feats);
        for (int b = nb - 1; b >= 0; --b) {
            const auto& level = state.levels[b];
            const std::size_t nq = level.idx.size();
            const int in_dim = state.mats.blocks[b].arch.input_dim();
            GridGrads<T> gg;
            gg.allocate_like(state.params.blocks[b]);
            Buffer<T> d_input(nq * in_dim, AllocClass::kTransient, "bwd.dinput");
            block_backward(state.mats.blocks[b], state.params.blocks[b], state.decode.blocks[b],
                           d_block_out.data(), nq, gg.bases, gg.mod_a, gg.mod_b, gg.bias,
                           d_input.data());
            for (std::size_t l = 0; l < gg.bases.size(); ++l)
                for (std::size_t k = 0; k < gg.bases[l].size(); ++k)
                    grads.block_bases[b][l][k] += gg.bases[l][k];

            // Head backward onto the pooled stage features.
            const auto arch = block_arch(cfg.decoder, cfg.embedding, b);
            const int cells = state.params.blocks[b].cell_count();
            Dense<T> d_head;
            d_head.in_dim = w.block_heads[b].in_dim;
            d_head.out_dim = w.block_heads[b].out_dim;
            d_head.w.assign(w.block_heads[b].w.size(), T(0));
            d_head.b.assign(w.block_heads[b].b.size(), T(0));
            const auto d_pooled =
                head_backward(w.block_heads[b], gg, arch, cfg.decoder.fmm_rank, cells,
                              state.unpack.pooled[b].data(), d_head);
            for (std::size_t k = 0; k < d_head.w.size(); ++k)
                grads.block_heads[b].w[k] += d_head.w[k];
            for (std::size_t k = 0; k < d_head.b.size(); ++k)
                grads.block_heads[b].b[k] += d_head.b[k];

            // Adaptive-average-pool backward into the stage map.
            {
                const int gh = cfg.decoder.grid_sizes[b].first;
                const int gw = cfg.decoder.grid_sizes[b].second;
                const int sz = cfg.encoder.stage_size(b);
                const int ch = cfg.encoder.stage_channels[b];
                for (int gi = 0; gi < gh; ++gi) {
                    const int r0 = gi * sz / gh, r1 = (gi + 1) * sz / gh;
                    for (int gj = 0; gj < gw; ++gj) {
                        const int c0 = gj * sz / gw, c1 = (gj + 1) * sz / gw;
                        const T inv = T(1) / T((r1 - r0) * (c1 - c0));
                        const T* src = d_pooled.data() + (std::size_t(gi) * gw + gj) * ch;
                        for (int i = r0; i < r1; ++i)
                            for (int j = c0; j < c1; ++j) {
                                T* dst = d_stage[b].data() + (std::size_t(i) * sz + j) * ch;
                                for (int c = 0; c < ch; ++c) dst[c] += src[c] * inv;
                            }
                    }
                }
            }

            // Prior-feature gradient flows to the previous block's feature box.
            if (b > 0) {
                const auto& geom = state.decode.boxes[b - 1];
                FeatMapBox<T> d_box;
                d_box.scale_h = geom.scale_h;
                d_box.scale_w = geom.scale_w;
                d_box.row0 = geom.row0;
                d_box.col0 = geom.col0;
                d_box.rows = geom.rows;
                d_box.cols = geom.cols;
                d_box.channels = cfg.decoder.hidden_width;
                d_box.data.reset(std::size_t(geom.rows) * geom.cols * cfg.decoder.hidden_width,
                                 AllocClass::kTransient, "bwd.dbox");
                const int d = cfg.embedding.vector_dim();
                upsample_scatter_grad(d_box, level.idx.data(), nq, level.plane.scale_h,
                                      level.plane.scale_w, d_input.data() + d,
                                      std::size_t(in_dim));
                // Gather the box gradient back at the previous level's queries.
                const auto& prev = state.levels[b - 1];
                d_block_out.reset(prev.idx.size() * cfg.decoder.hidden_width,
                                  AllocClass::kTransient, "bwd.dblockout");
                for (std::size_t q = 0; q < prev.idx.size(); ++q) {
                    const int row = int(prev.idx[q] / prev.plane.scale_w);
                    const int col = int(prev.idx[q] % prev.plane.scale_w);
                    std::memcpy(d_block_out.data() + q * cfg.decoder.hidden_width,
                                d_box.data.data() + d_box.local_index(row, col),
                                std::size_t(cfg.decoder.hidden_width) * sizeof(T));
                }
            }
        }
    }

    // LUT head backward (the lattice is identity + head output).
    if (state.params.has_lut() && !w.lut_head.w.empty()) {
        kernels::matmul_acc(d_lattice.data(), state.unpack.global_feat.data(),
                            grads.lut_head.w.data(), 1, w.lut_head.out_dim, w.lut_head.in_dim);
        for (int o = 0; o < w.lut_head.out_dim; ++o) grads.lut_head.b[o] += d_lattice[o];
        std::vector<T> zero_bias(w.lut_head.in_dim, T(0));
        std::vector<T> d_in(w.lut_head.in_dim);
        kernels::affine_batch(d_lattice.data(), w.lut_head.w.data(), zero_bias.data(), d_in.data(),
                              1, w.lut_head.out_dim, w.lut_head.in_dim);
        for (std::size_t k = 0; k < d_in.size(); ++k) d_gfeat[k] += d_in[k];
    }

    // Global-average backward into the deepest stage.
    {
        const int sz = cfg.encoder.stage_size(3);
        const int ch = cfg.encoder.stage_channels[3];
        const T inv = T(1) / T(std::size_t(sz) * sz);
        for (std::size_t p = 0; p < std::size_t(sz) * sz; ++p)
            for (int c = 0; c < ch; ++c) d_stage[3][p * ch + c] += d_gfeat[c] * inv;
    }

    // Conv chain backward.
    for (int s = 3; s >= 0; --s) {
        const auto& conv = w.convs[s];
        const int sz = cfg.encoder.stage_size(s);
        const std::size_t np = std::size_t(sz) * sz;
        kernels::leaky_relu_bwd(state.enc.pre_act[s].data(), d_stage[s].data(), d_stage[s].size(),
                                T(kLeakySlope));
        kernels::matmul_acc(d_stage[s].data(), state.enc.patches[s].data(), grads.convs[s].w.data(),
                            np, conv.out_ch, conv.in_ch * 9);
        for (std::size_t p = 0; p < np; ++p)
            for (int o = 0; o < conv.out_ch; ++o)
                grads.convs[s].b[o] += d_stage[s][p * conv.out_ch + o];
        if (s > 0) {
            const int pd = conv.in_ch * 9;
            Buffer<T> d_patches(np * pd, AllocClass::kTransient, "bwd.dpatches");
            std::vector<T> zero_bias(pd, T(0));
            kernels::affine_batch(d_stage[s].data(), conv.w.data(), zero_bias.data(),
                                  d_patches.data(), np, conv.out_ch, pd);
            // col2im scatter into the previous stage (post-activation).
            const int ph = sz * 2;  // previous stage spatial size
            for (int i = 0; i < sz; ++i)
                for (int j = 0; j < sz; ++j) {
                    const T* patch = d_patches.data() + (std::size_t(i) * sz + j) * pd;
                    for (int ci = 0; ci < conv.in_ch; ++ci)
                        for (int ky = 0; ky < 3; ++ky) {
                            const int y = 2 * i + ky - 1;
                            if (y < 0 || y >= ph) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int x = 2 * j + kx - 1;
                                if (x < 0 || x >= ph) continue;
                                d_stage[s - 1][(std::size_t(y) * ph + x) * conv.in_ch + ci] +=
                                    patch[ci * 9 + ky * 3 + kx];
                            }
                        }
                }
        }
    }
    return grads;
}

template ModelWeights<float> backward(const ModelWeights<float>&, const PreparedSample&,
                                      const RscCrop&, const LossConfig&, TrainMode,
                                      const GraphState<float>&);
template ModelWeights<double> backward(const ModelWeights<double>&, const PreparedSample&,
                                       const RscCrop&, const LossConfig&, TrainMode,
                                       const GraphState<double>&);

// ---------------------------------------------------------------------------
// Gradient verification

GradCheckReport gradcheck(std::uint64_t seed, TrainMode mode, double epsilon) {
    ModelConfig cfg;
    cfg.encoder.input_size = 32;
    cfg.encoder.stage_channels = {6, 8, 8, 8};
    cfg.encoder.lut_head = true;
    cfg.encoder.lut_dim = 3;
    cfg.embedding.num_frequencies = 2;
    cfg.decoder.hidden_width = 8;
    cfg.decoder.block_hidden_depths = {3, 2, 1};
    cfg.decoder.block_scales = {4, 2, 1};
    cfg.decoder.grid_sizes = {{2, 2}, {2, 2}, {2, 2}};
    cfg.decoder.fmm_rank = 2;
    cfg.decoder.app_hidden_depth = 2;
    validate(cfg);

    auto w = init_weights<double>(cfg, seed);
    // Push some lattice entries outside [0,1] so the overflow penalty (and
    // its gradient) is active.
    {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (auto& v : w.lut_head.b) v = noise(rng);
    }

    const TrainSample sample = make_synthetic_sample(16, seed + 1);
    const PreparedSample prepared = prepare_sample(sample, cfg);
    std::mt19937_64 rng(seed + 2);
    RscConfig rsc;
    rsc.crop_size = 8;
    rsc.stride_multiple = 4;
    const RscCrop crop = rsc_crop(prepared, cfg, rsc, rng);

    LossConfig loss_cfg;
    GraphState<double> state;
    forward_loss(w, prepared, crop, loss_cfg, mode, &state);
    auto grads = backward(w, prepared, crop, loss_cfg, mode, state);

    auto wrefs = w.registry();
    auto grefs = grads.registry();
    GradCheckReport report;
    for (std::size_t r = 0; r < wrefs.size(); ++r) {
        for (std::size_t k = 0; k < wrefs[r].size; ++k) {
            const double v = wrefs[r].data[k];
            wrefs[r].data[k] = v + epsilon;
            const double lp = forward_loss<double>(w, prepared, crop, loss_cfg, mode, nullptr);
            wrefs[r].data[k] = v - epsilon;
            const double lm = forward_loss<double>(w, prepared, crop, loss_cfg, mode, nullptr);
            wrefs[r].data[k] = v;
            const double fd = (lp - lm) / (2.0 * epsilon);
            const double an = grefs[r].data[k];
            // Magnitude floor: below 1e-6 the comparison degenerates to an
            // absolute check at 1e-10.
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_tensor = wrefs[r].name + "[" + std::to_string(k) + "]";
            }
            ++report.checked;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Optimization

double cosine_lr(int step, int total_steps, double lr_max, double lr_min) {
    require(total_steps >= 1, "cosine_lr: total_steps must be >= 1");
    if (step <= 0) return lr_max;
    if (step >= total_steps) return lr_min;
    constexpr double kPi = 3.14159265358979323846;
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(kPi * double(step) / total_steps));
}

template <typename T>
void apply_update(ModelWeights<T>& w, ModelWeights<T>& grads, double lr,
                  const OptimizerConfig& opt, OptimizerState<T>& state) {
    auto wrefs = w.registry();
    auto grefs = grads.registry();

    if (opt.kind == OptimizerConfig::Kind::kSgd) {
        for (std::size_t r = 0; r < wrefs.size(); ++r) {
            T* p = wrefs[r].data;
            const T* g = grefs[r].data;
            for (std::size_t k = 0; k < wrefs[r].size; ++k) {
                p[k] -= T(lr) * g[k];
                if (opt.weight_decay > 0.0) p[k] -= T(lr * opt.weight_decay) * p[k];
            }
        }
        ++state.step;
        return;
    }

    // Adam with decoupled weight decay; moments in double.
    if (state.m.size() != wrefs.size()) {
        state.m.resize(wrefs.size());
        state.v.resize(wrefs.size());
        for (std::size_t r = 0; r < wrefs.size(); ++r) {
            state.m[r].assign(wrefs[r].size, 0.0);
            state.v[r].assign(wrefs[r].size, 0.0);
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, double(state.step));
    for (std::size_t r = 0; r < wrefs.size(); ++r) {
        T* p = wrefs[r].data;
        const T* g = grefs[r].data;
        auto& m = state.m[r];
        auto& v = state.v[r];
        for (std::size_t k = 0; k < wrefs[r].size; ++k) {
            const double gk = double(g[k]);
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * gk;
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * gk * gk;
            const double mh = m[k] / bc1;
            const double vh = v[k] / bc2;
            double upd = lr * mh / (std::sqrt(vh) + opt.eps);
            if (opt.weight_decay > 0.0) upd += lr * opt.weight_decay * double(p[k]);
            p[k] = T(double(p[k]) - upd);
        }
    }
}

template void apply_update(ModelWeights<float>&, ModelWeights<float>&, double,
                           const OptimizerConfig&, OptimizerState<float>&);
template void apply_update(ModelWeights<double>&, ModelWeights<double>&, double,
                           const OptimizerConfig&, OptimizerState<double>&);

template <typename T>
T train_step(ModelWeights<T>& w, const PreparedSample& sample, const RscCrop& crop,
             const LossConfig& loss_cfg, TrainMode mode, double lr, const OptimizerConfig& opt,
             OptimizerState<T>& state) {
    GraphState<T> graph;
    const T loss = forward_loss(w, sample, crop, loss_cfg, mode, &graph);
    if (!std::isfinite(double(loss)))
        fail("train_step: non-finite loss (" + std::to_string(double(loss)) +
             ") at optimizer step " + std::to_string(state.step));
    auto grads = backward(w, sample, crop, loss_cfg, mode, graph);
    apply_update(w, grads, lr, opt, state);
    return loss;
}

template float train_step(ModelWeights<float>&, const PreparedSample&, const RscCrop&,
                          const LossConfig&, TrainMode, double, const OptimizerConfig&,
                          OptimizerState<float>&);
template double train_step(ModelWeights<double>&, const PreparedSample&, const RscCrop&,
                           const LossConfig&, TrainMode, double, const OptimizerConfig&,
                           OptimizerState<double>&);

template <typename T>
T train_step(ModelWeights<T>& w, const PreparedSample& sample, const RscCrop& crop,
             const LossConfig& loss_cfg, TrainMode mode, double lr, double weight_decay) {
    OptimizerConfig opt;
    opt.kind = OptimizerConfig::Kind::kSgd;
    opt.weight_decay = weight_decay;
    OptimizerState<T> state;
    return train_step(w, sample, crop, loss_cfg, mode, lr, opt, state);
}

template float train_step(ModelWeights<float>&, const PreparedSample&, const RscCrop&,
                          const LossConfig&, TrainMode, double, double);
template double train_step(ModelWeights<double>&, const PreparedSample&, const RscCrop&,
                           const LossConfig&, TrainMode, double, double);

// ---------------------------------------------------------------------------
// Desk-scale experiments

ModelConfig toy_model_config() {
    ModelConfig cfg;
    cfg.encoder.input_size = 64;
    cfg.encoder.stage_channels = {8, 16, 32, 64};
    cfg.encoder.lut_head = true;
    cfg.encoder.lut_dim = kDefaultLutDim;
    cfg.embedding.num_frequencies = 4;
    cfg.decoder.hidden_width = 32;
    cfg.decoder.block_hidden_depths = {3, 2, 1};
    cfg.decoder.block_scales = {4, 2, 1};
    cfg.decoder.grid_sizes = {{4, 4}, {4, 4}, {4, 4}};
    cfg.decoder.fmm_rank = 4;
    cfg.decoder.app_hidden_depth = 2;
    return cfg;
}

TrainSample make_synthetic_sample(int size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> uni(0.f, 1.f);

    TrainSample s;
    s.target = Image(size, size);
    for (int c = 0; c < 3; ++c) {
        const float a = 0.25f + 0.5f * uni(rng);
        const float bx = 0.6f * (uni(rng) - 0.5f);
        const float by = 0.6f * (uni(rng) - 0.5f);
        const float fx = 1.f + 2.f * uni(rng);
        const float fy = 1.f + 2.f * uni(rng);
        const float phase = 6.2831853f * uni(rng);
        const float amp = 0.1f + 0.15f * uni(rng);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                const float x = (j + 0.5f) / size, y = (i + 0.5f) / size;
                const float v = a + bx * x + by * y +
                                amp * std::sin(6.2831853f * (fx * x + fy * y) + phase);
                s.target.at(i, j, c) = std::clamp(v, 0.02f, 0.98f);
            }
    }

    // Rectangular foreground covering roughly a quarter of the image.
    s.mask = Mask(size, size);
    const int fh = size / 2, fw = size / 2;
    const int r0 = int(uni(rng) * (size - fh));
    const int c0 = int(uni(rng) * (size - fw));
    for (int i = r0; i < r0 + fh; ++i)
        for (int j = c0; j < c0 + fw; ++j) s.mask.at(i, j) = 1.f;

    // Composite: the target with an affine color jitter on the foreground.
    float m[3][3], t[3];
    std::normal_distribution<float> jitter(0.f, 0.15f);
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) m[a][b] = (a == b ? 1.f : 0.f) + jitter(rng);
        t[a] = 0.25f * jitter(rng) + (uni(rng) - 0.5f) * 0.2f;
    }
    s.composite = s.target;
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
            if (s.mask.at(i, j) <= kForegroundThreshold) continue;
            float rgb[3];
            for (int a = 0; a < 3; ++a)
                rgb[a] = m[a][0] * s.target.at(i, j, 0) + m[a][1] * s.target.at(i, j, 1) +
                         m[a][2] * s.target.at(i, j, 2) + t[a];
            for (int a = 0; a < 3; ++a) s.composite.at(i, j, a) = std::clamp(rgb[a], 0.f, 1.f);
        }
    return s;
}

FitResult fit_overfit(const TrainSample& sample, const ModelConfig& cfg, const FitOptions& opts) {
    validate(cfg);
    const int h = sample.composite.height, w = sample.composite.width;
    require(h == w && h % cfg.decoder.max_scale() == 0,
            "fit_overfit: sample must be square and divisible by the coarsest scale");

    const PreparedSample prepared = prepare_sample(sample, cfg);
    const RscCrop crop = rsc_crop_at(prepared, cfg, 0, 0, h);

    LossConfig loss_cfg;
    loss_cfg.lambda_lut = opts.lambda_lut;
    auto weights = init_weights<float>(cfg, opts.seed);

    FitResult result;
    result.model.cfg = cfg;
    auto eval_psnr = [&](const ModelWeights<float>& wts) {
        Model m;
        m.cfg = cfg;
        m.weights = wts;
        const Image out = opts.mode == TrainMode::kLutOnly
                              ? harmonize_lut_only(sample.composite, sample.mask, m)
                              : harmonize(sample.composite, sample.mask, m);
        return psnr(out, sample.target);
    };

    result.psnr_trace.emplace_back(0, eval_psnr(weights));
    OptimizerState<float> opt_state;
    for (int step = 0; step < opts.steps; ++step) {
        const double lr = cosine_lr(step, opts.steps, opts.lr, opts.lr_min);
        const float loss = train_step(weights, prepared, crop, loss_cfg, opts.mode, lr,
                                      opts.optimizer, opt_state);
        result.loss_trace.push_back(double(loss));
        if ((step + 1) % opts.eval_every == 0 || step + 1 == opts.steps)
            result.psnr_trace.emplace_back(step + 1, eval_psnr(weights));
    }
    result.model.weights = std::move(weights);
    result.final_psnr = result.psnr_trace.back().second;
    return result;
}

}  // namespace hinet
