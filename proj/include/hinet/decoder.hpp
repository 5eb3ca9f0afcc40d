#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "hinet/coords.hpp"
#include "hinet/image.hpp"
#include "hinet/lut.hpp"
#include "hinet/mem.hpp"
#include "hinet/mlp.hpp"

namespace hinet {

// Decoder structure: a stack of local-MLP blocks at increasing resolution
// (each conditioned on the bilinearly upsampled features of the previous
// block) followed by a global appearance MLP.
struct DecoderConfig {
    int hidden_width = 32;
    std::vector<int> block_hidden_depths = {3, 2, 1};
    std::vector<int> block_scales = {4, 2, 1};  // resolution divisors
    std::vector<std::pair<int, int>> grid_sizes = {{16, 16}, {16, 16}, {16, 16}};
    int fmm_rank = 4;
    int app_hidden_depth = 2;

    int num_blocks() const { return int(block_hidden_depths.size()); }
    int max_scale() const;
};

void validate(const DecoderConfig& cfg, const EmbeddingConfig& embed);

// Architecture of block b: input is the embedded vector (+ prior features for
// non-first blocks), hidden layers of hidden_width, output hidden_width.
MlpArch block_arch(const DecoderConfig& cfg, const EmbeddingConfig& embed, int block);
MlpArch app_arch(const DecoderConfig& cfg);

// All per-image decoder parameters emitted by the hypernetwork.
template <typename T>
struct DecoderParams {
    DecoderConfig cfg;
    std::vector<LocalMLPGrid<T>> blocks;
    MlpParams<T> app;
    std::vector<T> lut_lattice;  // D^3*3, empty when the LUT head is disabled
    int lut_dim = 0;

    bool has_lut() const { return !lut_lattice.empty(); }
    Lut3D lut() const;
    void validate_shapes(const EmbeddingConfig& embed) const;
};

// Hypernetwork-emitted parameter count for one block (per cell x cells),
// excluding the shared base tensors.
std::size_t block_modulation_count(const DecoderConfig& cfg, const EmbeddingConfig& embed,
                                   int block);
std::size_t app_modulation_count(const DecoderConfig& cfg, const EmbeddingConfig& embed);

// Dense per-cell weights of one block or of the appearance MLP (grid 1x1).
// wt is input-major for the batched forward kernel; w (output-major) and the
// modulation product mod are kept only when building for training.
template <typename T>
struct MaterializedBlock {
    MlpArch arch;
    int grid_h = 1, grid_w = 1;
    T leaky_slope = T(kLeakySlope);
    std::vector<Buffer<T>> wt;    // layer -> cells * in * out
    std::vector<Buffer<T>> w;     // layer -> cells * out * in (training only)
    std::vector<Buffer<T>> mod;   // layer -> cells * out * in (training only)
    std::vector<Buffer<T>> bias;  // layer -> cells * out

    int cell_count() const { return grid_h * grid_w; }
};

template <typename T>
MaterializedBlock<T> materialize_block(const LocalMLPGrid<T>& grid, bool for_training);
template <typename T>
MaterializedBlock<T> materialize_mlp(const MlpParams<T>& mlp, bool for_training);

template <typename T>
struct MaterializedDecoder {
    std::vector<MaterializedBlock<T>> blocks;
    MaterializedBlock<T> app;
};

template <typename T>
MaterializedDecoder<T> materialize_decoder(const DecoderParams<T>& params, bool for_training);

// A rectangular image/mask plane positioned within the full pixel grid of
// one pyramid scale. RSC crops use nonzero origins.
struct PlaneView {
    const Image* img = nullptr;
    const Mask* mask = nullptr;
    int scale_h = 0, scale_w = 0;  // full grid dims at this scale
    int row0 = 0, col0 = 0;        // origin of img(0,0) within the full grid

    InputVector vector_at(int row, int col) const {  // global scale indices
        const int i = row - row0, j = col - col0;
        InputVector v;
        v.x = (float(col) + 0.5f) / float(scale_w);
        v.y = (float(row) + 0.5f) / float(scale_h);
        v.r = img->at(i, j, 0);
        v.g = img->at(i, j, 1);
        v.b = img->at(i, j, 2);
        v.m = mask->at(i, j);
        return v;
    }
};

// Query pixels of one pyramid level: global linear indices (row-major
// sorted) into the scale grid plus the plane carrying their rgb/mask values.
struct QueryLevel {
    PlaneView plane;
    std::vector<std::int64_t> idx;
};

// Feature map over the bounding box of the computed queries at one scale.
template <typename T>
struct FeatMapBox {
    int scale_h = 0, scale_w = 0;
    int row0 = 0, col0 = 0, rows = 0, cols = 0;
    int channels = 0;
    Buffer<T> data;  // rows * cols * channels

    bool empty() const { return data.empty(); }
    std::size_t local_index(int row, int col) const {  // global scale indices
        return (std::size_t(row - row0) * cols + (col - col0)) * channels;
    }
};

// Per-block decoder query counts (region-mode memory accounting).
struct QueryStats {
    std::vector<std::size_t> block_queries;
    std::size_t finest_queries() const { return block_queries.empty() ? 0 : block_queries.back(); }
    std::size_t total() const;
};

// Recorded intermediates of one block run, in cell-bucketed order.
template <typename T>
struct BlockTrace {
    std::vector<std::int64_t> order;        // queries grouped by cell (stable)
    std::vector<std::int64_t> cell_offset;  // cells + 1 prefix sums
    Buffer<T> input;                        // n x in_dim, cell order
    std::vector<Buffer<T>> pre_act;         // per layer: n x out_dim, cell order
};

template <typename T>
struct DecodeTrace {
    struct BoxGeom {
        int scale_h = 0, scale_w = 0, row0 = 0, col0 = 0, rows = 0, cols = 0;
    };
    std::vector<BlockTrace<T>> blocks;  // per decoder block
    std::vector<BoxGeom> boxes;         // feature box geometry per coarse block
    BlockTrace<T> app;
};

// Runs one block over a query list. inputs is n x in_dim (embedded vectors,
// already concatenated with prior features where applicable); xs/ys may be
// null for single-cell blocks. Writes features (n x out_dim) in query order.
template <typename T>
void block_forward(const MaterializedBlock<T>& mat, const float* xs, const float* ys,
                   const T* inputs, std::size_t n, T* out_features, BlockTrace<T>* trace);

// Embeds the query vectors of a level into out (row stride out_stride).
template <typename T>
void embed_queries(const QueryLevel& level, const EmbeddingConfig& embed, T* out,
                   std::size_t out_stride);

// Normalized coordinates of a level's queries.
void query_coords(const QueryLevel& level, std::vector<float>& xs, std::vector<float>& ys);

// Bilinear gather from a source-scale feature box at destination-scale query
// positions (pixel-center convention, clamped at the grid border). Writes
// src.channels values per query at out + q * out_stride.
template <typename T>
void upsample_gather(const FeatMapBox<T>& src, const std::int64_t* idx, std::size_t n,
                     int dst_scale_h, int dst_scale_w, T* out, std::size_t out_stride);

// Transpose of upsample_gather: accumulates query gradients into the box.
template <typename T>
void upsample_scatter_grad(FeatMapBox<T>& dst, const std::int64_t* idx, std::size_t n,
                           int src_scale_h, int src_scale_w, const T* grads,
                           std::size_t grad_stride);

// Features of all blocks but the last, evaluated over their query levels
// (levels.size() == num_blocks - 1). Returns the last coarse block's feature
// box; empty for single-block configurations.
template <typename T>
FeatMapBox<T> compute_coarse_features(const DecoderParams<T>& params,
                                      const MaterializedDecoder<T>& mats,
                                      const std::vector<QueryLevel>& coarse_levels,
                                      const EmbeddingConfig& embed, QueryStats* stats,
                                      DecodeTrace<T>* trace);

// Finest block + appearance MLP over a query subset; rgb is n x 3, unclamped.
template <typename T>
Buffer<T> decode_fine(const DecoderParams<T>& params, const MaterializedDecoder<T>& mats,
                      const FeatMapBox<T>& coarse, const QueryLevel& fine_level,
                      const EmbeddingConfig& embed, QueryStats* stats, DecodeTrace<T>* trace);

// Whole-pyramid decode: levels.size() == num_blocks, finest last.
template <typename T>
Buffer<T> decoder_forward(const DecoderParams<T>& params, const std::vector<QueryLevel>& levels,
                          const EmbeddingConfig& embed, QueryStats* stats = nullptr,
                          DecodeTrace<T>* trace = nullptr);

std::vector<std::int64_t> full_index_list(int h, int w);

}  // namespace hinet
