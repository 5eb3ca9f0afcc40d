#pragma once

#include <array>
#include <string>
#include <vector>

#include "hinet/image.hpp"

namespace hinet {

// D x D x D x 3 lattice of output colors, indexed [r][g][b], blue index
// fastest. A valid LUT keeps entries in [0,1]; the overflow penalty measures
// violation.
struct Lut3D {
    int dim = 0;
    std::vector<float> lattice;

    Lut3D() = default;
    explicit Lut3D(int d) : dim(d), lattice(std::size_t(d) * d * d * 3, 0.f) {}

    std::size_t index(int r, int g, int b) const {
        return ((std::size_t(r) * dim + g) * dim + b) * 3;
    }
    float* entry(int r, int g, int b) { return lattice.data() + index(r, g, b); }
    const float* entry(int r, int g, int b) const { return lattice.data() + index(r, g, b); }

    bool is_identity() const;
};

inline constexpr int kDefaultLutDim = 7;

// lattice[i][j][k] = (i,j,k)/(D-1).
Lut3D lut_identity(int dim);

// Trilinear interpolation over the 8 enclosing lattice points; input clamped
// to [0,1]; exact at lattice points. Identity lattices are applied as exact
// no-ops.
std::array<float, 3> lut_apply(const Lut3D& lut, const std::array<float, 3>& rgb);

// Foreground color transform: out = m * lut(rgb) + (1 - m) * rgb per pixel.
// The identity check is hoisted out of the pixel loop.
Image lut_apply_foreground(const Lut3D& lut, const Image& img, const Mask& mask);

// Trilinear corner weights for one color: lattice cell (i0,j0,k0) and the 8
// corner weights indexed by bits (dr<<2 | dg<<1 | db). The input channels are
// located against the float-rounded knots i/(D-1), so the weights are exactly
// one-hot at lattice points.
struct LutTaps {
    int i0 = 0, j0 = 0, k0 = 0;
    double w[8] = {0};
};
LutTaps lut_taps(int dim, float r, float g, float b);

// Mean over entries of max(0, v-1)^2 + max(0, -v)^2.
double lut_overflow_penalty(const Lut3D& lut);

// lut_K = lut_M + (lut_N - lut_M) * (K - M) / (N - M); requires M < N and
// M <= K <= N.
Lut3D lut_interp(const Lut3D& lut_m, const Lut3D& lut_n, int frame_k, int frame_m, int frame_n);

// Text .cube format: "LUT_3D_SIZE D" header, one "r g b" line per entry,
// blue index fastest, 6 decimals.
void export_cube(const Lut3D& lut, const std::string& path);
Lut3D import_cube(const std::string& path);

}  // namespace hinet
