#include "hinet/coords.hpp"

#include <cmath>

#include "hinet/common.hpp"

namespace hinet {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

CoordGrid make_grid(int h, int w) {
    require(h >= 1 && w >= 1, "make_grid: dims must be >= 1");
    return CoordGrid{h, w};
}

CoordGrid subsample_grid(const CoordGrid& grid, int factor) {
    require(factor >= 1, "subsample_grid: factor must be >= 1");
    const int h = (grid.height + factor - 1) / factor;
    const int w = (grid.width + factor - 1) / factor;
    return CoordGrid{h, w};
}

void validate(const EmbeddingConfig& cfg) {
    require(cfg.num_frequencies >= 0, "EmbeddingConfig: num_frequencies must be >= 0");
    require(cfg.base_frequency > 0.f, "EmbeddingConfig: base_frequency must be > 0");
}

void fourier_embed(float x, float y, const EmbeddingConfig& cfg, float* out) {
    double freq = kTwoPi * double(cfg.base_frequency);
    for (int k = 0; k < cfg.num_frequencies; ++k) {
        out[4 * k + 0] = float(std::sin(freq * x));
        out[4 * k + 1] = float(std::cos(freq * x));
        out[4 * k + 2] = float(std::sin(freq * y));
        out[4 * k + 3] = float(std::cos(freq * y));
        freq *= 2.0;
    }
}

std::vector<float> fourier_embed(float x, float y, const EmbeddingConfig& cfg) {
    validate(cfg);
    std::vector<float> out(cfg.embed_dim());
    fourier_embed(x, y, cfg, out.data());
    return out;
}

template <typename T>
void embed_input_vector(const InputVector& v, const EmbeddingConfig& cfg, T* out) {
    double freq = kTwoPi * double(cfg.base_frequency);
    int p = 0;
    for (int k = 0; k < cfg.num_frequencies; ++k) {
        out[p++] = T(std::sin(freq * v.x));
        out[p++] = T(std::cos(freq * v.x));
        out[p++] = T(std::sin(freq * v.y));
        out[p++] = T(std::cos(freq * v.y));
        freq *= 2.0;
    }
    out[p++] = T(v.r);
    out[p++] = T(v.g);
    out[p++] = T(v.b);
    out[p++] = T(v.m);
    if (cfg.embed_rgb_mask) {
        const float ch[4] = {v.r, v.g, v.b, v.m};
        freq = kTwoPi * double(cfg.base_frequency);
        for (int k = 0; k < cfg.num_frequencies; ++k) {
            for (int c = 0; c < 4; ++c) {
                out[p++] = T(std::sin(freq * ch[c]));
                out[p++] = T(std::cos(freq * ch[c]));
            }
            freq *= 2.0;
        }
    }
}

template void embed_input_vector<float>(const InputVector&, const EmbeddingConfig&, float*);
template void embed_input_vector<double>(const InputVector&, const EmbeddingConfig&, double*);

std::vector<InputVector> assemble_vectors(const Image& img, const Mask& mask,
                                          const CoordGrid& grid) {
    require(img.height == grid.height && img.width == grid.width && mask.height == grid.height &&
                mask.width == grid.width,
            "assemble_vectors: dimension mismatch");
    std::vector<InputVector> batch(grid.size());
    for (int i = 0; i < grid.height; ++i) {
        const float y = grid.y_at(i);
        for (int j = 0; j < grid.width; ++j) {
            auto& v = batch[std::size_t(i) * grid.width + j];
            v.x = grid.x_at(j);
            v.y = y;
            v.r = img.at(i, j, 0);
            v.g = img.at(i, j, 1);
            v.b = img.at(i, j, 2);
            v.m = mask.at(i, j);
        }
    }
    return batch;
}

}  // namespace hinet
