#pragma once

#include <cstddef>
#include <vector>

#include "hinet/image.hpp"

namespace hinet {

// Normalized pixel-center coordinate grid: x = (j+0.5)/width, y = (i+0.5)/height.
struct CoordGrid {
    int height = 0;
    int width = 0;

    float x_at(int j) const { return (float(j) + 0.5f) / float(width); }
    float y_at(int i) const { return (float(i) + 0.5f) / float(height); }
    std::size_t size() const { return std::size_t(height) * width; }
};

CoordGrid make_grid(int h, int w);

// Grid of the downsampled resolution (ceil(h/f), ceil(w/f)) with its own
// pixel-center coordinates.
CoordGrid subsample_grid(const CoordGrid& grid, int factor);

// One decoder query: normalized coordinates, composite RGB, mask value.
struct InputVector {
    float x, y, r, g, b, m;
};

struct EmbeddingConfig {
    int num_frequencies = 8;    // F
    float base_frequency = 1.f; // b
    bool embed_rgb_mask = false;

    // Width of the coordinate embedding (4F), plus per-channel sin/cos pairs
    // for rgb+mask when embed_rgb_mask is set.
    int embed_dim() const { return 4 * num_frequencies; }
    int extra_dim() const { return embed_rgb_mask ? 8 * num_frequencies : 0; }
    // Decoder input width: coordinate embedding + raw rgb + mask (+ extras).
    int vector_dim() const { return embed_dim() + 4 + extra_dim(); }
};

void validate(const EmbeddingConfig& cfg);

// Log-spaced Fourier features: for k = 0..F-1 emits
// [sin(2*pi*b*2^k*x), cos(2*pi*b*2^k*x), sin(2*pi*b*2^k*y), cos(2*pi*b*2^k*y)].
void fourier_embed(float x, float y, const EmbeddingConfig& cfg, float* out);
std::vector<float> fourier_embed(float x, float y, const EmbeddingConfig& cfg);

// Full decoder input for one query: [coord embedding | r g b m | extras].
template <typename T>
void embed_input_vector(const InputVector& v, const EmbeddingConfig& cfg, T* out);

// Row-major batch of h*w InputVectors; vector i carries pixel i's RGB and mask.
std::vector<InputVector> assemble_vectors(const Image& img, const Mask& mask,
                                          const CoordGrid& grid);

}  // namespace hinet
