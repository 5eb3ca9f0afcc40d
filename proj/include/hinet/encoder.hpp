#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hinet/decoder.hpp"

namespace hinet {

// Four stride-2 3x3 conv stages with leaky activations, no normalization.
// Shallow stages feed the content grids, the deepest stage feeds the
// appearance MLP and the optional LUT head.
struct EncoderConfig {
    int input_size = 256;
    std::array<int, 4> stage_channels = {16, 32, 64, 128};
    bool lut_head = true;
    int lut_dim = kDefaultLutDim;

    int stage_size(int stage) const { return input_size >> (stage + 1); }  // stage 0..3
};

struct ModelConfig {
    EncoderConfig encoder;
    EmbeddingConfig embedding;
    DecoderConfig decoder;
};

void validate(const ModelConfig& cfg);

template <typename T>
struct ConvLayer {
    int in_ch = 0, out_ch = 0;
    std::vector<T> w;  // out_ch x in_ch x 3 x 3
    std::vector<T> b;  // out_ch
};

template <typename T>
struct Dense {
    int in_dim = 0, out_dim = 0;
    std::vector<T> w;  // out_dim x in_dim
    std::vector<T> b;  // out_dim
};

// All trainables: conv backbone, per-block/appearance/LUT projection heads,
// and the FMM base tensors shared across grid cells.
template <typename T>
struct ModelWeights {
    ModelConfig cfg;
    std::array<ConvLayer<T>, 4> convs;
    std::vector<Dense<T>> block_heads;          // one per decoder block
    Dense<T> app_head;
    Dense<T> lut_head;                          // empty when disabled
    std::vector<std::vector<std::vector<T>>> block_bases;  // block -> layer -> out x in
    std::vector<std::vector<T>> app_bases;                 // layer -> out x in

    struct TensorRef {
        std::string name;
        T* data;
        std::size_t size;
        std::vector<int> shape;
    };
    std::vector<TensorRef> registry();
    std::size_t parameter_count() const;
};

// Deterministic initialization; heads start near zero with bias offsets that
// put the initial FMM modulation close to one.
template <typename T>
ModelWeights<T> init_weights(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
ModelWeights<T> zero_weights(const ModelConfig& cfg);

template <typename U, typename T>
ModelWeights<U> cast_weights(const ModelWeights<T>& w);

// Stage feature maps, channel-last (h x w x c), after activation.
template <typename T>
struct FeaturePyramid {
    std::array<FeatMapBox<T>, 4> stages;  // row0/col0 always 0
};

// Trace of the encoder forward for the training backward pass.
template <typename T>
struct EncodeTrace {
    std::array<Buffer<T>, 4> patches;  // im2col patches per stage
    std::array<Buffer<T>, 4> pre_act;  // conv outputs before activation
};

// Consumes the resized composite + mask (exactly input_size square).
template <typename T>
FeaturePyramid<T> encode(const Image& img, const Mask& mask, const ModelWeights<T>& w,
                         EncodeTrace<T>* trace = nullptr);

// Adaptive average pooling with contiguous near-equal bins.
template <typename T>
FeatMapBox<T> pool_to_grid(const FeatMapBox<T>& feat, int grid_h, int grid_w);

template <typename T>
std::vector<T> global_average(const FeatMapBox<T>& feat);

template <typename T>
struct UnpackTrace {
    std::vector<Buffer<T>> pooled;  // per block: cells x stage_channels
    std::vector<T> global_feat;     // deep stage global average
};

// Pools shallow stages to the block grids and runs the linear heads; the
// deep stage is globally averaged and feeds the appearance head and the LUT
// residual head (lattice = identity + residual).
template <typename T>
DecoderParams<T> unpack_decoder_params(const FeaturePyramid<T>& pyr, const ModelWeights<T>& w,
                                       UnpackTrace<T>* trace = nullptr);

// Per-cell head output layout for block b, per layer: [mod_a | mod_b | bias].
std::size_t head_output_dim(const ModelConfig& cfg, int block);

}  // namespace hinet
