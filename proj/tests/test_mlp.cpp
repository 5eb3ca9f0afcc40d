#include <doctest.h>

#include <random>

#include "hinet/common.hpp"
#include "hinet/mlp.hpp"
#include "oracles.hpp"

using namespace hinet;

namespace {

template <typename T>
MlpLayerParams<T> random_layer(int in, int out, int rank, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    MlpLayerParams<T> p;
    p.in_dim = in;
    p.out_dim = out;
    p.rank = rank;
    p.base.resize(std::size_t(out) * in);
    p.mod_a.resize(std::size_t(out) * rank);
    p.mod_b.resize(std::size_t(rank) * in);
    p.bias.resize(out);
    for (auto& v : p.base) v = T(dist(rng));
    for (auto& v : p.mod_a) v = T(dist(rng));
    for (auto& v : p.mod_b) v = T(dist(rng));
    for (auto& v : p.bias) v = T(dist(rng));
    return p;
}

template <typename T>
LocalMLPGrid<T> random_grid(int gh, int gw, const MlpArch& arch, int rank, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    LocalMLPGrid<T> g;
    g.grid_h = gh;
    g.grid_w = gw;
    g.rank = rank;
    g.arch = arch;
    g.allocate();
    for (auto& layer : g.bases)
        for (auto& v : layer) v = T(dist(rng));
    for (auto& layer : g.cell_mod_a)
        for (auto& v : layer) v = T(dist(rng));
    for (auto& layer : g.cell_mod_b)
        for (auto& v : layer) v = T(dist(rng));
    for (auto& layer : g.cell_bias)
        for (auto& v : layer) v = T(dist(rng));
    return g;
}

}  // namespace

TEST_CASE("fmm_materialize") {
    std::mt19937_64 rng(1);
    SUBCASE("zero modulation annihilates the weights") {
        auto p = random_layer<double>(4, 3, 2, rng);
        for (auto& v : p.mod_a) v = 0.0;
        for (const double w : fmm_materialize(p)) CHECK(w == 0.0);
    }
    SUBCASE("rank-1 all-ones modulation reproduces the base") {
        auto p = random_layer<double>(5, 4, 1, rng);
        for (auto& v : p.mod_a) v = 1.0;
        for (auto& v : p.mod_b) v = 1.0;
        const auto w = fmm_materialize(p);
        for (std::size_t k = 0; k < w.size(); ++k) CHECK(w[k] == p.base[k]);
    }
    SUBCASE("random 3x4 rank-2 matches the triple-loop oracle exactly") {
        const auto p = random_layer<double>(4, 3, 2, rng);
        const auto w = fmm_materialize(p);
        const auto naive = oracles::fmm_naive(p);
        for (std::size_t k = 0; k < w.size(); ++k) CHECK(w[k] == naive[k]);
    }
    SUBCASE("parameter count formula") {
        CHECK(fmm_layer_param_count(4, 3, 2) == std::size_t(3 * 4 + 2 * (3 + 4) + 3));
        CHECK(fmm_modulation_count(4, 3, 2) == std::size_t(2 * (3 + 4) + 3));
    }
}

TEST_CASE("mlp_forward") {
    std::mt19937_64 rng(2);
    SUBCASE("all-zero parameters give zero output") {
        MlpParams<double> p;
        auto layer = random_layer<double>(6, 4, 2, rng);
        for (auto& v : layer.base) v = 0.0;
        for (auto& v : layer.bias) v = 0.0;
        p.layers.push_back(layer);
        for (const double v : mlp_forward(p, std::vector<double>(6, 0.5)))
            CHECK(v == 0.0);
    }
    SUBCASE("single identity layer") {
        MlpParams<double> p;
        MlpLayerParams<double> layer;
        layer.in_dim = layer.out_dim = 3;
        layer.rank = 1;
        layer.base.assign(9, 0.0);
        for (int i = 0; i < 3; ++i) layer.base[i * 3 + i] = 1.0;
        layer.mod_a.assign(3, 1.0);
        layer.mod_b.assign(3, 1.0);
        layer.bias.assign(3, 0.0);
        p.layers.push_back(layer);
        const std::vector<double> x{0.1, -0.7, 2.0};
        const auto y = mlp_forward(p, x);
        for (int i = 0; i < 3; ++i) CHECK(y[i] == x[i]);
    }
    SUBCASE("6->32->3 matches the interpreted evaluator within 1e-12") {
        MlpParams<double> p;
        p.layers.push_back(random_layer<double>(6, 32, 4, rng));
        p.layers.push_back(random_layer<double>(32, 3, 4, rng));
        std::vector<double> x(6);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : x) v = dist(rng);
        const auto y = mlp_forward(p, x);
        const auto ref = oracles::mlp_eval_naive(p, x);
        REQUIRE(y.size() == ref.size());
        for (std::size_t k = 0; k < y.size(); ++k)
            CHECK(y[k] == doctest::Approx(ref[k]).epsilon(1e-12));
    }
    SUBCASE("dimension mismatch rejected") {
        MlpParams<double> p;
        p.layers.push_back(random_layer<double>(6, 4, 2, rng));
        CHECK_THROWS_AS(mlp_forward(p, std::vector<double>(5, 0.0)), Error);
    }
}

TEST_CASE("cell_index") {
    SUBCASE("half-open convention") {
        const auto [i, j] = cell_index(0.5f + 1e-4f, 0.5f + 1e-4f, 2, 2);
        CHECK(i == 1);
        CHECK(j == 1);
    }
    SUBCASE("closed at the far edge") {
        const auto [i, j] = cell_index(1.f, 1.f, 4, 6);
        CHECK(i == 3);
        CHECK(j == 5);
    }
    SUBCASE("origin maps to cell (0,0)") {
        const auto [i, j] = cell_index(0.f, 0.f, 4, 6);
        CHECK(i == 0);
        CHECK(j == 0);
    }
    SUBCASE("out-of-range coordinates rejected") {
        CHECK_THROWS_AS(cell_index(1.5f, 0.f, 2, 2), Error);
    }
}

TEST_CASE("interp_weights matches the area-ratio oracle") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> uni(0.f, 1.f);
    std::uniform_int_distribution<int> gdim(2, 16);
    for (int trial = 0; trial < 2000; ++trial) {
        const int gh = gdim(rng), gw = gdim(rng);
        const float x = uni(rng), y = uni(rng);
        const auto iw = interp_weights(gh, gw, x, y);
        const auto ref = oracles::area_ratio_weights(gh, gw, x, y);
        REQUIRE(ref.valid);
        CHECK(iw.i0 == ref.i0);
        CHECK(iw.j0 == ref.j0);
        double sum = 0.0;
        for (int k = 0; k < 4; ++k) {
            CHECK(iw.w[k] >= 0.0);
            CHECK(std::abs(iw.w[k] - ref.w[k]) < 1e-12);
            sum += iw.w[k];
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("interp_mlp") {
    std::mt19937_64 rng(4);
    const MlpArch arch = MlpArch::make(6, 8, 1, 4);
    const auto grid = random_grid<double>(4, 4, arch, 2, rng);

    SUBCASE("cell-center query returns that cell bitwise") {
        for (int ci = 0; ci < 4; ++ci)
            for (int cj = 0; cj < 4; ++cj) {
                const float x = (float(cj) + 0.5f) / 4.f;
                const float y = (float(ci) + 0.5f) / 4.f;
                const auto blended = interp_mlp(grid, x, y);
                const auto direct = grid.cell_params(ci, cj);
                for (std::size_t l = 0; l < blended.layers.size(); ++l) {
                    CHECK(blended.layers[l].mod_a == direct.layers[l].mod_a);
                    CHECK(blended.layers[l].mod_b == direct.layers[l].mod_b);
                    CHECK(blended.layers[l].bias == direct.layers[l].bias);
                }
            }
    }
    SUBCASE("centroid of four centers is the arithmetic mean") {
        // Power-of-two grid: cell centers and their midpoint are exact floats.
        const float x = 0.25f;  // midpoint of centers 0.125 and 0.375
        const float y = 0.25f;
        const auto blended = interp_mlp(grid, x, y);
        const auto c00 = grid.cell_params(0, 0);
        const auto c01 = grid.cell_params(0, 1);
        const auto c10 = grid.cell_params(1, 0);
        const auto c11 = grid.cell_params(1, 1);
        for (std::size_t l = 0; l < blended.layers.size(); ++l)
            for (std::size_t k = 0; k < blended.layers[l].bias.size(); ++k) {
                const double mean =
                    0.25 * (c00.layers[l].bias[k] + c01.layers[l].bias[k] +
                            c10.layers[l].bias[k] + c11.layers[l].bias[k]);
                CHECK(std::abs(blended.layers[l].bias[k] - mean) < 1e-14);
            }
    }
    SUBCASE("forward through blended params is continuous across boundaries") {
        // Two queries straddling a vertical cell boundary at distance eps.
        const std::vector<double> input(6, 0.4);
        const float boundary = 1.f / 4.f;
        std::vector<double> gaps;
        for (const float eps : {1e-2f, 1e-3f, 1e-4f}) {
            const auto left = mlp_forward(interp_mlp(grid, boundary - eps / 2, 0.4f), input);
            const auto right = mlp_forward(interp_mlp(grid, boundary + eps / 2, 0.4f), input);
            double gap = 0.0;
            for (std::size_t k = 0; k < left.size(); ++k)
                gap = std::max(gap, std::abs(left[k] - right[k]));
            gaps.push_back(gap);
        }
        // The cross-boundary jump scales roughly linearly with separation.
        CHECK(gaps[1] < gaps[0] * 0.2);
        CHECK(gaps[2] < gaps[0] * 0.02);
    }
}

TEST_CASE("local_forward_nearest") {
    std::mt19937_64 rng(5);
    const MlpArch arch = MlpArch::make(4, 6, 1, 2);

    SUBCASE("1x1 grid equals plain mlp_forward") {
        const auto grid = random_grid<double>(1, 1, arch, 2, rng);
        const std::vector<double> x{0.1, 0.2, 0.3, 0.4};
        const auto a = local_forward_nearest(grid, 0.7f, 0.3f, x);
        const auto b = mlp_forward(grid.cell_params(0, 0), x);
        CHECK(a == b);
    }
    SUBCASE("same-cell inputs share parameters") {
        const auto grid = random_grid<double>(2, 2, arch, 2, rng);
        const std::vector<double> x{0.5, -0.5, 1.0, 0.0};
        const auto a = local_forward_nearest(grid, 0.1f, 0.1f, x);
        const auto b = local_forward_nearest(grid, 0.4f, 0.4f, x);
        CHECK(a == b);  // same cell, same input -> identical output
    }
    SUBCASE("crafted two-cell grid jumps by 1 across the boundary") {
        // Cells output constants 0 and 1 regardless of input.
        LocalMLPGrid<double> grid;
        grid.grid_h = 1;
        grid.grid_w = 2;
        grid.rank = 1;
        grid.arch = MlpArch::make(4, 4, 0, 1);
        grid.allocate();
        // bias of cell 1 = 1.0 (weights all stay zero)
        grid.cell_bias[0][1] = 1.0;
        const std::vector<double> x{0.3, 0.3, 0.3, 0.3};
        const auto lo = local_forward_nearest(grid, 0.5f - 1e-4f, 0.5f, x);
        const auto hi = local_forward_nearest(grid, 0.5f + 1e-4f, 0.5f, x);
        CHECK(std::abs(hi[0] - lo[0]) == 1.0);
    }
}
