#include "hinet/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "hinet/common.hpp"

namespace hinet {

MlpArch MlpArch::make(int in_dim, int width, int hidden_depth, int out_dim) {
    require(in_dim >= 1 && width >= 1 && hidden_depth >= 0 && out_dim >= 1,
            "MlpArch: invalid dimensions");
    MlpArch arch;
    int cur = in_dim;
    for (int d = 0; d < hidden_depth; ++d) {
        arch.layers.push_back({cur, width});
        cur = width;
    }
    arch.layers.push_back({cur, out_dim});
    return arch;
}

std::size_t fmm_layer_param_count(int in_dim, int out_dim, int rank) {
    return std::size_t(out_dim) * in_dim + fmm_modulation_count(in_dim, out_dim, rank);
}

std::size_t fmm_modulation_count(int in_dim, int out_dim, int rank) {
    return std::size_t(rank) * (in_dim + out_dim) + std::size_t(out_dim);
}

template <typename T>
std::vector<T> fmm_materialize(const MlpLayerParams<T>& layer) {
    const int in = layer.in_dim, out = layer.out_dim, r = layer.rank;
    require(int(layer.base.size()) == out * in && int(layer.mod_a.size()) == out * r &&
                int(layer.mod_b.size()) == r * in && int(layer.bias.size()) == out,
            "fmm_materialize: shape mismatch");
    std::vector<T> w(std::size_t(out) * in);
    for (int o = 0; o < out; ++o) {
        for (int i = 0; i < in; ++i) {
            T mod = T(0);
            for (int k = 0; k < r; ++k) mod += layer.mod_a[o * r + k] * layer.mod_b[k * in + i];
            w[std::size_t(o) * in + i] = layer.base[std::size_t(o) * in + i] * mod;
        }
    }
    return w;
}

template std::vector<float> fmm_materialize(const MlpLayerParams<float>&);
template std::vector<double> fmm_materialize(const MlpLayerParams<double>&);

template <typename T>
std::vector<T> mlp_forward(const MlpParams<T>& params, const std::vector<T>& input) {
    require(!params.layers.empty(), "mlp_forward: no layers");
    require(int(input.size()) == params.layers.front().in_dim, "mlp_forward: input dim mismatch");
    std::vector<T> cur = input;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        require(int(cur.size()) == layer.in_dim, "mlp_forward: layer dim chain mismatch");
        const auto w = fmm_materialize(layer);
        std::vector<T> next(layer.out_dim);
        for (int o = 0; o < layer.out_dim; ++o) {
            T acc = layer.bias[o];
            for (int i = 0; i < layer.in_dim; ++i) acc += w[std::size_t(o) * layer.in_dim + i] * cur[i];
            next[o] = acc;
        }
        if (l + 1 < params.layers.size()) {
            for (auto& v : next) v = std::max(v, params.leaky_slope * v);
        }
        cur = std::move(next);
    }
    return cur;
}

template std::vector<float> mlp_forward(const MlpParams<float>&, const std::vector<float>&);
template std::vector<double> mlp_forward(const MlpParams<double>&, const std::vector<double>&);

std::pair<int, int> cell_index(float x, float y, int grid_h, int grid_w) {
    require(x >= 0.f && x <= 1.f && y >= 0.f && y <= 1.f, "cell_index: coords outside [0,1]");
    const int i = std::min(int(y * grid_h), grid_h - 1);
    const int j = std::min(int(x * grid_w), grid_w - 1);
    return {i, j};
}

template <typename T>
void LocalMLPGrid<T>::allocate() {
    const int cells = cell_count();
    bases.resize(arch.layers.size());
    cell_mod_a.resize(arch.layers.size());
    cell_mod_b.resize(arch.layers.size());
    cell_bias.resize(arch.layers.size());
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        const auto& s = arch.layers[l];
        bases[l].assign(std::size_t(s.out_dim) * s.in_dim, T(0));
        cell_mod_a[l].assign(std::size_t(cells) * s.out_dim * rank, T(0));
        cell_mod_b[l].assign(std::size_t(cells) * rank * s.in_dim, T(0));
        cell_bias[l].assign(std::size_t(cells) * s.out_dim, T(0));
    }
}

template <typename T>
MlpParams<T> LocalMLPGrid<T>::cell_params(int ci, int cj) const {
    const int cell = ci * grid_w + cj;
    MlpParams<T> p;
    p.leaky_slope = leaky_slope;
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
        const auto& s = arch.layers[l];
        MlpLayerParams<T> layer;
        layer.in_dim = s.in_dim;
        layer.out_dim = s.out_dim;
        layer.rank = rank;
        layer.base = bases[l];
        const std::size_t na = std::size_t(s.out_dim) * rank;
        const std::size_t nb = std::size_t(rank) * s.in_dim;
        const std::size_t nbias = std::size_t(s.out_dim);
        layer.mod_a.assign(cell_mod_a[l].begin() + cell * na, cell_mod_a[l].begin() + (cell + 1) * na);
        layer.mod_b.assign(cell_mod_b[l].begin() + cell * nb, cell_mod_b[l].begin() + (cell + 1) * nb);
        layer.bias.assign(cell_bias[l].begin() + cell * nbias, cell_bias[l].begin() + (cell + 1) * nbias);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

template struct LocalMLPGrid<float>;
template struct LocalMLPGrid<double>;

namespace {

// Maps a coordinate to (knot index, fraction) against the float-rounded cell
// centers (k + 0.5) / n. Fraction is exactly 0 at a center.
void center_locate(float coord, int n, int& idx, double& frac) {
    if (n == 1) {
        idx = 0;
        frac = 0.0;
        return;
    }
    const float first = 0.5f / float(n);
    const float last = (float(n - 1) + 0.5f) / float(n);
    if (coord <= first) {
        idx = 0;
        frac = 0.0;
        return;
    }
    if (coord >= last) {
        idx = n - 2;
        frac = 1.0;
        return;
    }
    int k = std::min(int(double(coord) * n - 0.5), n - 2);
    k = std::max(k, 0);
    // Rounding of the initial guess can be off by one; fix against the knots.
    while (k > 0 && coord < (float(k) + 0.5f) / float(n)) --k;
    while (k < n - 2 && coord >= (float(k + 1) + 0.5f) / float(n)) ++k;
    const double c0 = double((float(k) + 0.5f) / float(n));
    const double c1 = double((float(k + 1) + 0.5f) / float(n));
    idx = k;
    frac = (double(coord) - c0) / (c1 - c0);
    frac = std::clamp(frac, 0.0, 1.0);
}

}  // namespace

InterpWeights interp_weights(int grid_h, int grid_w, float x, float y) {
    require(grid_h >= 1 && grid_w >= 1, "interp_weights: empty grid");
    InterpWeights out;
    double u = 0.0, v = 0.0;
    center_locate(x, grid_w, out.j0, u);
    center_locate(y, grid_h, out.i0, v);
    out.w[0] = (1.0 - v) * (1.0 - u);
    out.w[1] = (1.0 - v) * u;
    out.w[2] = v * (1.0 - u);
    out.w[3] = v * u;
    return out;
}

template <typename T>
MlpParams<T> interp_mlp(const LocalMLPGrid<T>& grid, float x, float y) {
    const auto iw = interp_weights(grid.grid_h, grid.grid_w, x, y);
    const int j1 = std::min(iw.j0 + 1, grid.grid_w - 1);
    const int i1 = std::min(iw.i0 + 1, grid.grid_h - 1);
    const int cells[4] = {iw.i0 * grid.grid_w + iw.j0, iw.i0 * grid.grid_w + j1,
                          i1 * grid.grid_w + iw.j0, i1 * grid.grid_w + j1};

    MlpParams<T> p;
    p.leaky_slope = grid.leaky_slope;
    for (std::size_t l = 0; l < grid.arch.layers.size(); ++l) {
        const auto& s = grid.arch.layers[l];
        MlpLayerParams<T> layer;
        layer.in_dim = s.in_dim;
        layer.out_dim = s.out_dim;
        layer.rank = grid.rank;
        layer.base = grid.bases[l];
        const std::size_t na = std::size_t(s.out_dim) * grid.rank;
        const std::size_t nb = std::size_t(grid.rank) * s.in_dim;
        const std::size_t nbias = std::size_t(s.out_dim);
        layer.mod_a.assign(na, T(0));
        layer.mod_b.assign(nb, T(0));
        layer.bias.assign(nbias, T(0));
        for (int corner = 0; corner < 4; ++corner) {
            const T w = T(iw.w[corner]);
            const std::size_t cell = std::size_t(cells[corner]);
            for (std::size_t k = 0; k < na; ++k) layer.mod_a[k] += w * grid.cell_mod_a[l][cell * na + k];
            for (std::size_t k = 0; k < nb; ++k) layer.mod_b[k] += w * grid.cell_mod_b[l][cell * nb + k];
            for (std::size_t k = 0; k < nbias; ++k)
                layer.bias[k] += w * grid.cell_bias[l][cell * nbias + k];
        }
        p.layers.push_back(std::move(layer));
    }
    return p;
}

template MlpParams<float> interp_mlp(const LocalMLPGrid<float>&, float, float);
template MlpParams<double> interp_mlp(const LocalMLPGrid<double>&, float, float);

template <typename T>
std::vector<T> local_forward_nearest(const LocalMLPGrid<T>& grid, float x, float y,
                                     const std::vector<T>& input) {
    const auto [ci, cj] = cell_index(x, y, grid.grid_h, grid.grid_w);
    return mlp_forward(grid.cell_params(ci, cj), input);
}

template std::vector<float> local_forward_nearest(const LocalMLPGrid<float>&, float, float,
                                                  const std::vector<float>&);
template std::vector<double> local_forward_nearest(const LocalMLPGrid<double>&, float, float,
                                                   const std::vector<double>&);

}  // namespace hinet
