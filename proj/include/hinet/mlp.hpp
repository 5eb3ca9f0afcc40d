#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace hinet {

inline constexpr float kLeakySlope = 0.2f;

struct LayerShape {
    int in_dim = 0;
    int out_dim = 0;
};

// Layer dimensions of one MLP; hidden layers use the leaky rectifier, the
// final layer is linear.
struct MlpArch {
    std::vector<LayerShape> layers;

    int input_dim() const { return layers.front().in_dim; }
    int output_dim() const { return layers.back().out_dim; }

    // in -> width (hidden_depth times, leaky) -> out (linear).
    static MlpArch make(int in_dim, int width, int hidden_depth, int out_dim);
};

// One FMM-parameterized affine layer: effective weight
// W[o][i] = base[o][i] * sum_k mod_a[o][k] * mod_b[k][i].
// base is a trainable tensor shared across an MLP grid's cells; mod_a, mod_b
// and bias are hypernetwork outputs.
template <typename T>
struct MlpLayerParams {
    int in_dim = 0;
    int out_dim = 0;
    int rank = 0;
    std::vector<T> base;   // out_dim x in_dim
    std::vector<T> mod_a;  // out_dim x rank
    std::vector<T> mod_b;  // rank x in_dim
    std::vector<T> bias;   // out_dim
};

template <typename T>
struct MlpParams {
    std::vector<MlpLayerParams<T>> layers;
    T leaky_slope = T(kLeakySlope);
};

// Trainable parameter count of one layer: out*in (base) + r*(out+in)
// (modulation) + out (bias).
std::size_t fmm_layer_param_count(int in_dim, int out_dim, int rank);
// Per-cell (hypernetwork-emitted) parameter count: r*(in+out) + out.
std::size_t fmm_modulation_count(int in_dim, int out_dim, int rank);

// Layout of a hypernetwork head's per-cell output vector: for each layer,
// [mod_a (out*r) | mod_b (r*in) | bias (out)]. fn(layer, kind, offset, len).
enum class ModSlice { kModA, kModB, kBias };
template <typename Fn>
void visit_modulation_layout(const MlpArch& arch, int rank, Fn&& fn) {
    std::size_t off = 0;
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        const auto& s = arch.layers[l];
        fn(l, ModSlice::kModA, off, std::size_t(s.out_dim) * rank);
        off += std::size_t(s.out_dim) * rank;
        fn(l, ModSlice::kModB, off, std::size_t(rank) * s.in_dim);
        off += std::size_t(rank) * s.in_dim;
        fn(l, ModSlice::kBias, off, std::size_t(s.out_dim));
        off += std::size_t(s.out_dim);
    }
}

// Dense out_dim x in_dim weight matrix from an FMM layer.
template <typename T>
std::vector<T> fmm_materialize(const MlpLayerParams<T>& layer);

// Affine + leaky rectifier chain; final layer affine only.
template <typename T>
std::vector<T> mlp_forward(const MlpParams<T>& params, const std::vector<T>& input);

// Nearest-cell routing: i = min(floor(y*grid_h), grid_h-1), likewise j.
// Half-open cells, last cell closed. Requires x, y in [0,1].
std::pair<int, int> cell_index(float x, float y, int grid_h, int grid_w);

// Grid of MLPs sharing one architecture and per-layer base tensors; each
// cell carries its own modulation factors and biases.
template <typename T>
struct LocalMLPGrid {
    int grid_h = 0;
    int grid_w = 0;
    int rank = 0;
    MlpArch arch;
    T leaky_slope = T(kLeakySlope);
    std::vector<std::vector<T>> bases;  // per layer, out x in

    // Per layer, cells x (field size), cell index row-major.
    std::vector<std::vector<T>> cell_mod_a;
    std::vector<std::vector<T>> cell_mod_b;
    std::vector<std::vector<T>> cell_bias;

    int cell_count() const { return grid_h * grid_w; }
    void allocate();
    MlpParams<T> cell_params(int ci, int cj) const;
};

// Bilinear blend weights over the four nearest cell centers; nonnegative,
// sum to 1, one-hot exactly at cell centers (coordinates are compared
// against the float-rounded centers). Clamped outside the center span.
struct InterpWeights {
    int i0 = 0, j0 = 0;  // top-left cell of the 2x2 neighborhood
    double w[4] = {0, 0, 0, 0};  // (i0,j0), (i0,j0+1), (i0+1,j0), (i0+1,j0+1)
};
InterpWeights interp_weights(int grid_h, int grid_w, float x, float y);

// Parameter-wise blend of the four nearest cell MLPs (Eq. 1 validation
// oracle; the production path is the LRIP block stack).
template <typename T>
MlpParams<T> interp_mlp(const LocalMLPGrid<T>& grid, float x, float y);

// Routes the input to its nearest cell's MLP (the discontinuous baseline).
template <typename T>
std::vector<T> local_forward_nearest(const LocalMLPGrid<T>& grid, float x, float y,
                                     const std::vector<T>& input);

}  // namespace hinet
