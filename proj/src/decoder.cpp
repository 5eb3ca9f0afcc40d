#include "hinet/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hinet/common.hpp"
#include "hinet/kernels.hpp"

namespace hinet {

int DecoderConfig::max_scale() const {
    int m = 1;
    for (int s : block_scales) m = std::max(m, s);
    return m;
}

namespace {
bool is_pow2(int v) { return v >= 1 && (v & (v - 1)) == 0; }
}  // namespace

void validate(const DecoderConfig& cfg, const EmbeddingConfig& embed) {
    validate(embed);
    const int nb = cfg.num_blocks();
    require(nb >= 1, "DecoderConfig: at least one block required");
    require(int(cfg.block_scales.size()) == nb && int(cfg.grid_sizes.size()) == nb,
            "DecoderConfig: per-block lists must have equal lengths");
    require(cfg.hidden_width >= 1 && cfg.fmm_rank >= 1 && cfg.app_hidden_depth >= 0,
            "DecoderConfig: invalid dimensions");
    for (int b = 0; b < nb; ++b) {
        require(is_pow2(cfg.block_scales[b]), "DecoderConfig: block scale must be a power of 2");
        if (b > 0)
            require(cfg.block_scales[b] <= cfg.block_scales[b - 1],
                    "DecoderConfig: block scales must be nonincreasing");
        require(cfg.grid_sizes[b].first >= 1 && cfg.grid_sizes[b].second >= 1,
                "DecoderConfig: grid dims must be >= 1");
        require(cfg.block_hidden_depths[b] >= 0, "DecoderConfig: negative hidden depth");
    }
    require(cfg.block_scales.back() == 1, "DecoderConfig: finest block must run at scale 1");
}

MlpArch block_arch(const DecoderConfig& cfg, const EmbeddingConfig& embed, int block) {
    const int in = embed.vector_dim() + (block > 0 ? cfg.hidden_width : 0);
    return MlpArch::make(in, cfg.hidden_width, cfg.block_hidden_depths[block], cfg.hidden_width);
}

MlpArch app_arch(const DecoderConfig& cfg) {
    return MlpArch::make(cfg.hidden_width, cfg.hidden_width, cfg.app_hidden_depth, 3);
}

namespace {
std::size_t arch_modulation_count(const MlpArch& arch, int rank) {
    std::size_t total = 0;
    for (const auto& s : arch.layers) total += fmm_modulation_count(s.in_dim, s.out_dim, rank);
    return total;
}
}  // namespace

std::size_t block_modulation_count(const DecoderConfig& cfg, const EmbeddingConfig& embed,
                                   int block) {
    return arch_modulation_count(block_arch(cfg, embed, block), cfg.fmm_rank);
}

std::size_t app_modulation_count(const DecoderConfig& cfg, const EmbeddingConfig&) {
    return arch_modulation_count(app_arch(cfg), cfg.fmm_rank);
}

template <typename T>
Lut3D DecoderParams<T>::lut() const {
    require(has_lut(), "DecoderParams: no LUT lattice present");
    Lut3D out(lut_dim);
    for (std::size_t k = 0; k < lut_lattice.size(); ++k) out.lattice[k] = float(lut_lattice[k]);
    return out;
}

template <typename T>
void DecoderParams<T>::validate_shapes(const EmbeddingConfig& embed) const {
    validate(cfg, embed);
    require(int(blocks.size()) == cfg.num_blocks(), "DecoderParams: block count mismatch");
    for (int b = 0; b < cfg.num_blocks(); ++b) {
        const auto arch = block_arch(cfg, embed, b);
        const auto& g = blocks[b];
        require(g.grid_h == cfg.grid_sizes[b].first && g.grid_w == cfg.grid_sizes[b].second,
                "DecoderParams: grid size mismatch");
        require(g.arch.layers.size() == arch.layers.size(), "DecoderParams: layer count mismatch");
        for (std::size_t l = 0; l < arch.layers.size(); ++l) {
            require(g.arch.layers[l].in_dim == arch.layers[l].in_dim &&
                        g.arch.layers[l].out_dim == arch.layers[l].out_dim,
                    "DecoderParams: layer shape mismatch");
            const auto& s = arch.layers[l];
            const std::size_t cells = std::size_t(g.cell_count());
            require(g.bases[l].size() == std::size_t(s.out_dim) * s.in_dim &&
                        g.cell_mod_a[l].size() == cells * s.out_dim * g.rank &&
                        g.cell_mod_b[l].size() == cells * g.rank * s.in_dim &&
                        g.cell_bias[l].size() == cells * s.out_dim,
                    "DecoderParams: parameter blob size mismatch");
        }
        require(g.arch.output_dim() == cfg.hidden_width, "DecoderParams: block output width");
    }
    const auto aarch = app_arch(cfg);
    require(app.layers.size() == aarch.layers.size() && app.layers.back().out_dim == 3,
            "DecoderParams: appearance MLP shape mismatch");
    if (has_lut())
        require(int(lut_lattice.size()) == lut_dim * lut_dim * lut_dim * 3,
                "DecoderParams: LUT lattice size mismatch");
}

template struct DecoderParams<float>;
template struct DecoderParams<double>;

std::size_t QueryStats::total() const {
    std::size_t t = 0;
    for (auto q : block_queries) t += q;
    return t;
}

// ---------------------------------------------------------------------------
// Materialization

namespace {

template <typename T>
void materialize_cells(const MlpArch& arch, int rank, int cells, T slope,
                       const std::vector<std::vector<T>>& bases,
                       const std::vector<std::vector<T>>& mod_a,
                       const std::vector<std::vector<T>>& mod_b,
                       const std::vector<std::vector<T>>& bias, bool for_training,
                       MaterializedBlock<T>& out) {
    const std::size_t layers = arch.layers.size();
    out.arch = arch;
    out.leaky_slope = slope;
    out.wt.resize(layers);
    out.bias.resize(layers);
    if (for_training) {
        out.w.resize(layers);
        out.mod.resize(layers);
    }
    for (std::size_t l = 0; l < layers; ++l) {
        const int in = arch.layers[l].in_dim, od = arch.layers[l].out_dim;
        const std::size_t wsz = std::size_t(cells) * od * in;
        out.wt[l].reset(wsz, AllocClass::kParams, "decoder.wt");
        out.bias[l].reset(std::size_t(cells) * od, AllocClass::kParams, "decoder.bias");
        if (for_training) {
            out.w[l].reset(wsz, AllocClass::kParams, "decoder.w");
            out.mod[l].reset(wsz, AllocClass::kParams, "decoder.mod");
        }
        for (int c = 0; c < cells; ++c) {
            const T* a = mod_a[l].data() + std::size_t(c) * od * rank;
            const T* b = mod_b[l].data() + std::size_t(c) * rank * in;
            const T* base = bases[l].data();
            T* wt = out.wt[l].data() + std::size_t(c) * od * in;
            T* w = for_training ? out.w[l].data() + std::size_t(c) * od * in : nullptr;
            T* mod = for_training ? out.mod[l].data() + std::size_t(c) * od * in : nullptr;
            for (int o = 0; o < od; ++o)
                for (int i = 0; i < in; ++i) {
                    T m = T(0);
                    for (int k = 0; k < rank; ++k) m += a[o * rank + k] * b[k * in + i];
                    const T wv = base[std::size_t(o) * in + i] * m;
                    wt[std::size_t(i) * od + o] = wv;
                    if (w) w[std::size_t(o) * in + i] = wv;
                    if (mod) mod[std::size_t(o) * in + i] = m;
                }
            std::memcpy(out.bias[l].data() + std::size_t(c) * od,
                        bias[l].data() + std::size_t(c) * od, std::size_t(od) * sizeof(T));
        }
    }
}

}  // namespace

template <typename T>
MaterializedBlock<T> materialize_block(const LocalMLPGrid<T>& grid, bool for_training) {
    MaterializedBlock<T> out;
    out.grid_h = grid.grid_h;
    out.grid_w = grid.grid_w;
    materialize_cells(grid.arch, grid.rank, grid.cell_count(), grid.leaky_slope, grid.bases,
                      grid.cell_mod_a, grid.cell_mod_b, grid.cell_bias, for_training, out);
    return out;
}

template <typename T>
MaterializedBlock<T> materialize_mlp(const MlpParams<T>& mlp, bool for_training) {
    MaterializedBlock<T> out;
    out.grid_h = out.grid_w = 1;
    MlpArch arch;
    std::vector<std::vector<T>> bases, mod_a, mod_b, bias;
    int rank = mlp.layers.empty() ? 1 : mlp.layers.front().rank;
    for (const auto& layer : mlp.layers) {
        arch.layers.push_back({layer.in_dim, layer.out_dim});
        bases.push_back(layer.base);
        mod_a.push_back(layer.mod_a);
        mod_b.push_back(layer.mod_b);
        bias.push_back(layer.bias);
        require(layer.rank == rank, "materialize_mlp: inconsistent rank");
    }
    materialize_cells(arch, rank, 1, mlp.leaky_slope, bases, mod_a, mod_b, bias, for_training, out);
    return out;
}

template <typename T>
MaterializedDecoder<T> materialize_decoder(const DecoderParams<T>& params, bool for_training) {
    MaterializedDecoder<T> out;
    out.blocks.reserve(params.blocks.size());
    for (const auto& g : params.blocks) out.blocks.push_back(materialize_block(g, for_training));
    out.app = materialize_mlp(params.app, for_training);
    return out;
}

template MaterializedBlock<float> materialize_block(const LocalMLPGrid<float>&, bool);
template MaterializedBlock<double> materialize_block(const LocalMLPGrid<double>&, bool);
template MaterializedBlock<float> materialize_mlp(const MlpParams<float>&, bool);
template MaterializedBlock<double> materialize_mlp(const MlpParams<double>&, bool);
template MaterializedDecoder<float> materialize_decoder(const DecoderParams<float>&, bool);
template MaterializedDecoder<double> materialize_decoder(const DecoderParams<double>&, bool);

// ---------------------------------------------------------------------------
// Query plumbing

std::vector<std::int64_t> full_index_list(int h, int w) {
    std::vector<std::int64_t> idx(std::size_t(h) * w);
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = std::int64_t(k);
    return idx;
}

template <typename T>
void embed_queries(const QueryLevel& level, const EmbeddingConfig& embed, T* out,
                   std::size_t out_stride) {
    const auto& idx = level.idx;
    parallel_for(idx.size(), [&](std::size_t q0, std::size_t q1) {
        for (std::size_t q = q0; q < q1; ++q) {
            const int row = int(idx[q] / level.plane.scale_w);
            const int col = int(idx[q] % level.plane.scale_w);
            embed_input_vector(level.plane.vector_at(row, col), embed, out + q * out_stride);
        }
    });
}

template void embed_queries(const QueryLevel&, const EmbeddingConfig&, float*, std::size_t);
template void embed_queries(const QueryLevel&, const EmbeddingConfig&, double*, std::size_t);

void query_coords(const QueryLevel& level, std::vector<float>& xs, std::vector<float>& ys) {
    const auto& idx = level.idx;
    xs.resize(idx.size());
    ys.resize(idx.size());
    for (std::size_t q = 0; q < idx.size(); ++q) {
        const int row = int(idx[q] / level.plane.scale_w);
        const int col = int(idx[q] % level.plane.scale_w);
        xs[q] = (float(col) + 0.5f) / float(level.plane.scale_w);
        ys[q] = (float(row) + 0.5f) / float(level.plane.scale_h);
    }
}

namespace {

struct Tap {
    int lo, hi;
    double frac;
};

inline Tap tap_for(int dst_idx, int dst_n, int src_n) {
    const double src = (double(dst_idx) + 0.5) * double(src_n) / double(dst_n) - 0.5;
    Tap t;
    if (src <= 0.0) {
        t.lo = t.hi = 0;
        t.frac = 0.0;
    } else if (src >= double(src_n - 1)) {
        t.lo = t.hi = src_n - 1;
        t.frac = 0.0;
    } else {
        t.lo = int(src);
        t.hi = t.lo + 1;
        t.frac = src - double(t.lo);
    }
    return t;
}

}  // namespace

template <typename T>
void upsample_gather(const FeatMapBox<T>& src, const std::int64_t* idx, std::size_t n,
                     int dst_scale_h, int dst_scale_w, T* out, std::size_t out_stride) {
    const int ch = src.channels;
    parallel_for(n, [&](std::size_t q0, std::size_t q1) {
        for (std::size_t q = q0; q < q1; ++q) {
            const int row = int(idx[q] / dst_scale_w);
            const int col = int(idx[q] % dst_scale_w);
            const Tap ty = tap_for(row, dst_scale_h, src.scale_h);
            const Tap tx = tap_for(col, dst_scale_w, src.scale_w);
            require(ty.lo >= src.row0 && ty.hi < src.row0 + src.rows && tx.lo >= src.col0 &&
                        tx.hi < src.col0 + src.cols,
                    "upsample_gather: source box does not cover the query footprint");
            const T w00 = T((1.0 - ty.frac) * (1.0 - tx.frac));
            const T w01 = T((1.0 - ty.frac) * tx.frac);
            const T w10 = T(ty.frac * (1.0 - tx.frac));
            const T w11 = T(ty.frac * tx.frac);
            const T* p00 = src.data.data() + src.local_index(ty.lo, tx.lo);
            const T* p01 = src.data.data() + src.local_index(ty.lo, tx.hi);
            const T* p10 = src.data.data() + src.local_index(ty.hi, tx.lo);
            const T* p11 = src.data.data() + src.local_index(ty.hi, tx.hi);
            T* dst = out + q * out_stride;
            for (int c = 0; c < ch; ++c)
                dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
        }
    });
}

template void upsample_gather(const FeatMapBox<float>&, const std::int64_t*, std::size_t, int, int,
                              float*, std::size_t);
template void upsample_gather(const FeatMapBox<double>&, const std::int64_t*, std::size_t, int,
                              int, double*, std::size_t);

template <typename T>
void upsample_scatter_grad(FeatMapBox<T>& dst, const std::int64_t* idx, std::size_t n,
                           int src_scale_h, int src_scale_w, const T* grads,
                           std::size_t grad_stride) {
    const int ch = dst.channels;
    for (std::size_t q = 0; q < n; ++q) {
        const int row = int(idx[q] / src_scale_w);
        const int col = int(idx[q] % src_scale_w);
        const Tap ty = tap_for(row, src_scale_h, dst.scale_h);
        const Tap tx = tap_for(col, src_scale_w, dst.scale_w);
        const double w[4] = {(1.0 - ty.frac) * (1.0 - tx.frac), (1.0 - ty.frac) * tx.frac,
                             ty.frac * (1.0 - tx.frac), ty.frac * tx.frac};
        const std::size_t off[4] = {dst.local_index(ty.lo, tx.lo), dst.local_index(ty.lo, tx.hi),
                                    dst.local_index(ty.hi, tx.lo), dst.local_index(ty.hi, tx.hi)};
        const T* g = grads + q * grad_stride;
        for (int k = 0; k < 4; ++k) {
            T* d = dst.data.data() + off[k];
            const T wk = T(w[k]);
            for (int c = 0; c < ch; ++c) d[c] += wk * g[c];
        }
    }
}

template void upsample_scatter_grad(FeatMapBox<float>&, const std::int64_t*, std::size_t, int, int,
                                    const float*, std::size_t);
template void upsample_scatter_grad(FeatMapBox<double>&, const std::int64_t*, std::size_t, int,
                                    int, const double*, std::size_t);

// ---------------------------------------------------------------------------
// Block forward

template <typename T>
void block_forward(const MaterializedBlock<T>& mat, const float* xs, const float* ys,
                   const T* inputs, std::size_t n, T* out_features, BlockTrace<T>* trace) {
    const int cells = mat.cell_count();
    const std::size_t layers = mat.arch.layers.size();
    const int in0 = mat.arch.input_dim();
    const int out_dim = mat.arch.output_dim();

    // Stable bucketing of queries by cell.
    std::vector<std::int64_t> order_local, offset_local;
    std::vector<std::int64_t>& order = trace ? trace->order : order_local;
    std::vector<std::int64_t>& offset = trace ? trace->cell_offset : offset_local;
    order.resize(n);
    offset.assign(std::size_t(cells) + 1, 0);
    if (cells == 1) {
        for (std::size_t q = 0; q < n; ++q) order[q] = std::int64_t(q);
        offset[1] = std::int64_t(n);
    } else {
        require(xs && ys, "block_forward: coordinates required for multi-cell grids");
        std::vector<std::int32_t> cell_of(n);
        for (std::size_t q = 0; q < n; ++q) {
            const auto [ci, cj] = cell_index(xs[q], ys[q], mat.grid_h, mat.grid_w);
            cell_of[q] = ci * mat.grid_w + cj;
            ++offset[cell_of[q] + 1];
        }
        for (int c = 0; c < cells; ++c) offset[c + 1] += offset[c];
        std::vector<std::int64_t> cursor(offset.begin(), offset.end() - 1);
        for (std::size_t q = 0; q < n; ++q) order[cursor[cell_of[q]]++] = std::int64_t(q);
    }

    // Gather inputs into cell order.
    Buffer<T> gathered_local;
    Buffer<T>& gathered = trace ? trace->input : gathered_local;
    gathered.reset(n * in0, AllocClass::kTransient, "block.input");
    parallel_for(n, [&](std::size_t k0, std::size_t k1) {
        for (std::size_t k = k0; k < k1; ++k)
            std::memcpy(gathered.data() + k * in0, inputs + std::size_t(order[k]) * in0,
                        std::size_t(in0) * sizeof(T));
    });

    int max_dim = 1;  // ping/pong hold layer outputs only
    for (const auto& s : mat.arch.layers) max_dim = std::max(max_dim, s.out_dim);
    Buffer<T> ping(n * max_dim, AllocClass::kTransient, "block.act0");
    Buffer<T> pong(n * max_dim, AllocClass::kTransient, "block.act1");
    if (trace) {
        trace->pre_act.resize(layers);
        for (std::size_t l = 0; l < layers; ++l)
            trace->pre_act[l].reset(n * mat.arch.layers[l].out_dim, AllocClass::kTransient,
                                    "block.preact");
    }

    for (int c = 0; c < cells; ++c) {
        const std::size_t b0 = std::size_t(offset[c]);
        const std::size_t b1 = std::size_t(offset[c + 1]);
        if (b0 == b1) continue;
        parallel_for(b1 - b0, [&](std::size_t r0, std::size_t r1) {
            const std::size_t k0 = b0 + r0;
            const std::size_t rows = r1 - r0;
            const T* cur = gathered.data() + k0 * in0;
            std::size_t cur_dim = in0;
            for (std::size_t l = 0; l < layers; ++l) {
                const auto& s = mat.arch.layers[l];
                const T* wt = mat.wt[l].data() + std::size_t(c) * s.in_dim * s.out_dim;
                const T* bias = mat.bias[l].data() + std::size_t(c) * s.out_dim;
                T* dst = (l % 2 == 0 ? ping.data() : pong.data()) + k0 * max_dim;
                // destination rows are max_dim-strided scratch; compute into a
                // compact slice instead to keep the kernel contract
                T* compact = dst;  // rows * out_dim, contiguous
                kernels::affine_batch(cur, wt, bias, compact, rows, cur_dim, s.out_dim);
                if (trace)
                    std::memcpy(trace->pre_act[l].data() + k0 * s.out_dim, compact,
                                rows * s.out_dim * sizeof(T));
                if (l + 1 < layers)
                    kernels::leaky_relu(compact, rows * s.out_dim, mat.leaky_slope);
                cur = compact;
                cur_dim = s.out_dim;
            }
            // Scatter final activations to query order.
            for (std::size_t k = k0; k < k0 + rows; ++k)
                std::memcpy(out_features + std::size_t(order[k]) * out_dim,
                            cur + (k - k0) * cur_dim, std::size_t(out_dim) * sizeof(T));
        });
    }
}

template void block_forward(const MaterializedBlock<float>&, const float*, const float*,
                            const float*, std::size_t, float*, BlockTrace<float>*);
template void block_forward(const MaterializedBlock<double>&, const float*, const float*,
                            const double*, std::size_t, double*, BlockTrace<double>*);

// ---------------------------------------------------------------------------
// Pyramid decode

namespace {

template <typename T>
FeatMapBox<T> make_box(const QueryLevel& level, int channels) {
    FeatMapBox<T> box;
    box.scale_h = level.plane.scale_h;
    box.scale_w = level.plane.scale_w;
    box.channels = channels;
    if (level.idx.empty()) return box;
    int rmin = int(level.idx.front() / level.plane.scale_w);
    int rmax = int(level.idx.back() / level.plane.scale_w);
    int cmin = level.plane.scale_w, cmax = -1;
    for (const auto id : level.idx) {
        const int col = int(id % level.plane.scale_w);
        cmin = std::min(cmin, col);
        cmax = std::max(cmax, col);
    }
    box.row0 = rmin;
    box.col0 = cmin;
    box.rows = rmax - rmin + 1;
    box.cols = cmax - cmin + 1;
    box.data.reset(std::size_t(box.rows) * box.cols * channels, AllocClass::kTransient,
                   "decode.featbox");
    return box;
}

// Builds the block input matrix: [embedded vector | prior features].
template <typename T>
Buffer<T> build_block_input(const QueryLevel& level, const EmbeddingConfig& embed,
                            const FeatMapBox<T>* prior, int in_dim) {
    const std::size_t n = level.idx.size();
    const int d = embed.vector_dim();
    Buffer<T> input(n * in_dim, AllocClass::kTransient, "decode.input");
    embed_queries(level, embed, input.data(), std::size_t(in_dim));
    if (prior) {
        require(d + prior->channels == in_dim, "build_block_input: width mismatch");
        upsample_gather(*prior, level.idx.data(), n, level.plane.scale_h, level.plane.scale_w,
                        input.data() + d, std::size_t(in_dim));
    } else {
        require(d == in_dim, "build_block_input: width mismatch");
    }
    return input;
}

}  // namespace

template <typename T>
FeatMapBox<T> compute_coarse_features(const DecoderParams<T>& params,
                                      const MaterializedDecoder<T>& mats,
                                      const std::vector<QueryLevel>& coarse_levels,
                                      const EmbeddingConfig& embed, QueryStats* stats,
                                      DecodeTrace<T>* trace) {
    const int nb = params.cfg.num_blocks();
    require(int(coarse_levels.size()) == nb - 1, "compute_coarse_features: level count mismatch");
    if (trace) {
        trace->blocks.resize(nb);
        trace->boxes.resize(nb - 1);
    }
    if (stats) stats->block_queries.assign(nb, 0);

    FeatMapBox<T> prev;
    for (int b = 0; b < nb - 1; ++b) {
        const auto& level = coarse_levels[b];
        const std::size_t n = level.idx.size();
        const int in_dim = mats.blocks[b].arch.input_dim();
        const int width = mats.blocks[b].arch.output_dim();
        Buffer<T> input = build_block_input<T>(level, embed, b > 0 ? &prev : nullptr, in_dim);
        std::vector<float> xs, ys;
        query_coords(level, xs, ys);
        Buffer<T> feats(n * width, AllocClass::kTransient, "decode.feats");
        block_forward(mats.blocks[b], xs.data(), ys.data(), input.data(), n, feats.data(),
                      trace ? &trace->blocks[b] : nullptr);
        input.release();

        FeatMapBox<T> box = make_box<T>(level, width);
        for (std::size_t q = 0; q < n; ++q) {
            const int row = int(level.idx[q] / level.plane.scale_w);
            const int col = int(level.idx[q] % level.plane.scale_w);
            std::memcpy(box.data.data() + box.local_index(row, col), feats.data() + q * width,
                        std::size_t(width) * sizeof(T));
        }
        if (trace)
            trace->boxes[b] = {box.scale_h, box.scale_w, box.row0, box.col0, box.rows, box.cols};
        if (stats) stats->block_queries[b] = n;
        prev = std::move(box);
    }
    return prev;
}

template FeatMapBox<float> compute_coarse_features(const DecoderParams<float>&,
                                                   const MaterializedDecoder<float>&,
                                                   const std::vector<QueryLevel>&,
                                                   const EmbeddingConfig&, QueryStats*,
                                                   DecodeTrace<float>*);
template FeatMapBox<double> compute_coarse_features(const DecoderParams<double>&,
                                                    const MaterializedDecoder<double>&,
                                                    const std::vector<QueryLevel>&,
                                                    const EmbeddingConfig&, QueryStats*,
                                                    DecodeTrace<double>*);

template <typename T>
Buffer<T> decode_fine(const DecoderParams<T>& params, const MaterializedDecoder<T>& mats,
                      const FeatMapBox<T>& coarse, const QueryLevel& fine_level,
                      const EmbeddingConfig& embed, QueryStats* stats, DecodeTrace<T>* trace) {
    const int nb = params.cfg.num_blocks();
    const std::size_t n = fine_level.idx.size();
    const auto& mat = mats.blocks[nb - 1];
    const int in_dim = mat.arch.input_dim();
    const int width = mat.arch.output_dim();

    Buffer<T> input =
        build_block_input<T>(fine_level, embed, nb > 1 ? &coarse : nullptr, in_dim);
    std::vector<float> xs, ys;
    query_coords(fine_level, xs, ys);
    Buffer<T> feats(n * width, AllocClass::kTransient, "decode.fine.feats");
    block_forward(mat, xs.data(), ys.data(), input.data(), n, feats.data(),
                  trace ? &trace->blocks[nb - 1] : nullptr);
    input.release();

    Buffer<T> rgb(n * 3, AllocClass::kTransient, "decode.rgb");
    block_forward(mats.app, nullptr, nullptr, feats.data(), n, rgb.data(),
                  trace ? &trace->app : nullptr);
    if (stats) {
        if (stats->block_queries.empty()) stats->block_queries.assign(nb, 0);
        stats->block_queries[nb - 1] += n;
    }
    return rgb;
}

template Buffer<float> decode_fine(const DecoderParams<float>&, const MaterializedDecoder<float>&,
                                   const FeatMapBox<float>&, const QueryLevel&,
                                   const EmbeddingConfig&, QueryStats*, DecodeTrace<float>*);
template Buffer<double> decode_fine(const DecoderParams<double>&,
                                    const MaterializedDecoder<double>&, const FeatMapBox<double>&,
                                    const QueryLevel&, const EmbeddingConfig&, QueryStats*,
                                    DecodeTrace<double>*);

template <typename T>
Buffer<T> decoder_forward(const DecoderParams<T>& params, const std::vector<QueryLevel>& levels,
                          const EmbeddingConfig& embed, QueryStats* stats,
                          DecodeTrace<T>* trace) {
    require(int(levels.size()) == params.cfg.num_blocks(), "decoder_forward: level count mismatch");
    const auto mats = materialize_decoder(params, trace != nullptr);
    std::vector<QueryLevel> coarse(levels.begin(), levels.end() - 1);
    FeatMapBox<T> box = compute_coarse_features(params, mats, coarse, embed, stats, trace);
    return decode_fine(params, mats, box, levels.back(), embed, stats, trace);
}

template Buffer<float> decoder_forward(const DecoderParams<float>&, const std::vector<QueryLevel>&,
                                       const EmbeddingConfig&, QueryStats*, DecodeTrace<float>*);
template Buffer<double> decoder_forward(const DecoderParams<double>&,
                                        const std::vector<QueryLevel>&, const EmbeddingConfig&,
                                        QueryStats*, DecodeTrace<double>*);

}  // namespace hinet
