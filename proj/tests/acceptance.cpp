// Acceptance suite: one pass/fail line per criterion, exit nonzero on any
// failure. Run with a list of criterion numbers to restrict the run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hinet/bench.hpp"
#include "hinet/common.hpp"
#include "hinet/metrics.hpp"
#include "hinet/training.hpp"
#include "oracles.hpp"

using namespace hinet;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// --- 1. Eq. 1 bilinear-MLP oracle suite ------------------------------------

Outcome criterion1() {
    const double t0 = now_s();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> gdim(2, 16);
    std::uniform_real_distribution<float> uni(0.f, 1.f);

    double worst = 0.0;
    for (int q = 0; q < 10000; ++q) {
        const int gh = gdim(rng), gw = gdim(rng);
        const float x = uni(rng), y = uni(rng);
        const auto iw = interp_weights(gh, gw, x, y);
        const auto ref = oracles::area_ratio_weights(gh, gw, x, y);
        if (iw.i0 != ref.i0 || iw.j0 != ref.j0)
            return {false, "anchor cell mismatch at query " + std::to_string(q)};
        double sum = 0.0;
        for (int k = 0; k < 4; ++k) {
            if (iw.w[k] < 0.0) return {false, "negative weight"};
            worst = std::max(worst, std::abs(iw.w[k] - ref.w[k]));
            sum += iw.w[k];
        }
        worst = std::max(worst, std::abs(sum - 1.0));
    }
    if (worst >= 1e-12) return {false, "oracle deviation " + std::to_string(worst)};

    // Cell-center queries return that cell's parameters bitwise.
    const MlpArch arch = MlpArch::make(6, 8, 1, 8);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
        const int gh = gdim(rng), gw = gdim(rng);
        LocalMLPGrid<double> grid;
        grid.grid_h = gh;
        grid.grid_w = gw;
        grid.rank = 2;
        grid.arch = arch;
        grid.allocate();
        for (auto& l : grid.bases)
            for (auto& v : l) v = dist(rng);
        for (auto& l : grid.cell_mod_a)
            for (auto& v : l) v = dist(rng);
        for (auto& l : grid.cell_mod_b)
            for (auto& v : l) v = dist(rng);
        for (auto& l : grid.cell_bias)
            for (auto& v : l) v = dist(rng);
        for (int ci = 0; ci < gh; ++ci)
            for (int cj = 0; cj < gw; ++cj) {
                const float cx = (float(cj) + 0.5f) / float(gw);
                const float cy = (float(ci) + 0.5f) / float(gh);
                const auto blended = interp_mlp(grid, cx, cy);
                const auto direct = grid.cell_params(ci, cj);
                for (std::size_t l = 0; l < blended.layers.size(); ++l)
                    if (blended.layers[l].mod_a != direct.layers[l].mod_a ||
                        blended.layers[l].mod_b != direct.layers[l].mod_b ||
                        blended.layers[l].bias != direct.layers[l].bias)
                        return {false, "cell-center query not bitwise"};
            }
    }
    const double secs = now_s() - t0;
    if (secs >= 10.0) return {false, "runtime " + std::to_string(secs) + " s >= 10 s"};
    std::ostringstream d;
    d << "10000 queries, max deviation " << worst << ", " << secs << " s";
    return {true, d.str()};
}

// --- 2. Gradient verification ----------------------------------------------

Outcome criterion2() {
    const double t0 = now_s();
    const auto decoder_report = gradcheck(1, TrainMode::kDecoder, 1e-4);
    const auto lut_report = gradcheck(321, TrainMode::kLutOnly, 1e-4);
    const double secs = now_s() - t0;
    std::ostringstream d;
    d << "decoder path " << decoder_report.max_rel_err << " (worst "
      << decoder_report.worst_tensor << ", " << decoder_report.checked << " params), lut path "
      << lut_report.max_rel_err << ", " << secs << " s";
    const bool pass = decoder_report.max_rel_err < 1e-4 && lut_report.max_rel_err < 1e-4 &&
                      secs < 300.0;
    return {pass, d.str()};
}

// --- 3/4. Tiled and region equivalence -------------------------------------

struct Triple {
    Image img;
    Mask mask;
    Model model;
};

Triple make_triple(int res, std::uint64_t seed) {
    Triple t;
    t.img = random_image(res, res, seed);
    t.mask = random_binary_mask(res, res, seed + 1000, 0.3f);
    t.model.cfg = toy_model_config();
    t.model.weights = init_weights<float>(t.model.cfg, seed + 2000);
    return t;
}

Outcome criterion3() {
    for (int trial = 0; trial < 20; ++trial) {
        const Triple t = make_triple(64, 100 + trial);
        const Image full = harmonize(t.img, t.mask, t.model);
        for (const int tiles : {1, 2, 4, 8}) {
            const Image tiled =
                harmonize_tiled(t.img, t.mask, t.model, plan_tiles_by_count(64, 64, tiles));
            for (std::size_t k = 0; k < full.data.size(); ++k)
                if (tiled.data[k] != full.data[k])
                    return {false, "triple " + std::to_string(trial) + ", " +
                                       std::to_string(tiles) + " tiles: bitwise mismatch"};
        }
    }
    return {true, "20 triples x tile counts {1,2,4,8} bitwise equal"};
}

Outcome criterion4() {
    for (int trial = 0; trial < 20; ++trial) {
        const Triple t = make_triple(64, 100 + trial);
        const Image full = harmonize(t.img, t.mask, t.model);
        const Image region = harmonize_region(t.img, t.mask, t.model);
        for (int i = 0; i < 64; ++i)
            for (int j = 0; j < 64; ++j)
                for (int c = 0; c < 3; ++c) {
                    const bool fg = t.mask.at(i, j) > kForegroundThreshold;
                    const float expect = fg ? full.at(i, j, c) : t.img.at(i, j, c);
                    if (region.at(i, j, c) != expect)
                        return {false, "triple " + std::to_string(trial) + ": pixel mismatch"};
                }
    }
    return {true, "20 triples: foreground == full mode, background == input, bitwise"};
}

// --- 5. RSC estimator validity ----------------------------------------------

Outcome criterion5() {
    const ModelConfig cfg = toy_model_config();
    const TrainSample sample = make_synthetic_sample(64, 500);
    const PreparedSample prepared = prepare_sample(sample, cfg);
    const auto weights = init_weights<float>(cfg, 501);
    LossConfig loss_cfg;

    GraphState<float> full_state;
    forward_loss(weights, prepared, rsc_crop_at(prepared, cfg, 0, 0, 64), loss_cfg,
                 TrainMode::kDecoder, &full_state);

    std::mt19937_64 rng(502);
    RscConfig rsc;
    rsc.crop_size = 16;
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        const RscCrop crop = rsc_crop(prepared, cfg, rsc, rng);
        GraphState<float> state;
        forward_loss(weights, prepared, crop, loss_cfg, TrainMode::kDecoder, &state);
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t q = 0; q < full_state.supervised_idx.size(); ++q) {
            const int row = int(full_state.supervised_idx[q] / 64);
            const int col = int(full_state.supervised_idx[q] % 64);
            if (row < crop.corner_row || row >= crop.corner_row + rsc.crop_size) continue;
            if (col < crop.corner_col || col >= crop.corner_col + rsc.crop_size) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = double(full_state.pred[q * 3 + c]) -
                                 double(full_state.target_v[q * 3 + c]);
                acc += d * d;
                ++count;
            }
        }
        worst = std::max(worst, std::abs(double(state.loss_main) - acc / double(count)));
    }
    std::ostringstream d;
    d << "50 random crops, max |crop loss - restricted full loss| = " << worst;
    return {worst < 1e-6, d.str()};
}

// --- 6. Memory properties ----------------------------------------------------

Outcome criterion6() {
    Model model;
    model.cfg = toy_model_config();
    model.weights = init_weights<float>(model.cfg, 600);
    const Image img = random_image(512, 512, 601);
    const Mask mask = random_binary_mask(512, 512, 602);

    const auto full =
        measure([&] { harmonize_tiled(img, mask, model, plan_tiles_by_count(512, 512, 1)); });
    const auto tiled =
        measure([&] { harmonize_tiled(img, mask, model, plan_tiles_by_count(512, 512, 4)); });
    const double ratio = double(tiled.mem.peak_transient()) / double(full.mem.peak_transient());

    // RSC step peak at source resolutions 256^2 and 1024^2, equal crop size.
    LossConfig loss_cfg;
    auto step_peak = [&](int res, std::uint64_t seed) {
        const TrainSample sample = make_synthetic_sample(res, seed);
        const PreparedSample prepared = prepare_sample(sample, model.cfg);
        auto w = init_weights<float>(model.cfg, 610);
        OptimizerConfig opt;
        OptimizerState<float> state;
        std::mt19937_64 rng(611);
        RscConfig rsc;
        rsc.crop_size = 64;
        const auto r = measure([&] {
            const RscCrop crop = rsc_crop(prepared, model.cfg, rsc, rng);
            train_step(w, prepared, crop, loss_cfg, TrainMode::kDecoder, 1e-3, opt, state);
        });
        return r.mem.peak_transient();
    };
    const auto peak_256 = step_peak(256, 612);
    const auto peak_1024 = step_peak(1024, 613);
    const double rsc_ratio = double(peak_1024) / double(peak_256);

    std::ostringstream d;
    d << "T=4/T=1 transient peak ratio " << ratio << " (threshold 0.35); RSC step peak 1024^2/256^2 = "
      << rsc_ratio << " (tolerance 1%)";
    return {ratio < 0.35 && rsc_ratio > 0.99 && rsc_ratio < 1.01, d.str()};
}

// --- 7. Boundary continuity ---------------------------------------------------

Outcome criterion7() {
    // Crafted two-cell grid: constant outputs 0 and 1.
    const int width = 4;
    LocalMLPGrid<float> two_cell;
    two_cell.grid_h = 1;
    two_cell.grid_w = 2;
    two_cell.rank = 1;
    two_cell.arch = MlpArch::make(4, width, 0, width);
    two_cell.allocate();
    for (std::size_t k = 0; k < two_cell.cell_bias[0].size() / 2; ++k)
        two_cell.cell_bias[0][two_cell.cell_bias[0].size() / 2 + k] = 1.f;  // cell 1 -> 1

    const std::vector<float> input(4, 0.25f);
    const auto lo = local_forward_nearest(two_cell, 0.5f - 5e-4f, 0.5f, input);
    const auto hi = local_forward_nearest(two_cell, 0.5f + 5e-4f, 0.5f, input);
    const double nearest_jump = std::abs(double(hi[0]) - double(lo[0]));

    const auto ilo = mlp_forward(interp_mlp(two_cell, 0.5f - 5e-4f, 0.5f), input);
    const auto ihi = mlp_forward(interp_mlp(two_cell, 0.5f + 5e-4f, 0.5f), input);
    const double interp_jump = std::abs(double(ihi[0]) - double(ilo[0]));

    // LRIP: the 0/1 grid sits in a coarse block; the finest block and the
    // appearance MLP pass the upsampled prior through.
    EmbeddingConfig ecfg;
    ecfg.num_frequencies = 0;  // vector = rgb + mask only
    DecoderConfig cfg;
    cfg.hidden_width = width;
    cfg.block_hidden_depths = {0, 0};
    cfg.block_scales = {4, 1};
    cfg.grid_sizes = {{1, 2}, {1, 1}};
    cfg.fmm_rank = 1;
    cfg.app_hidden_depth = 0;
    validate(cfg, ecfg);

    DecoderParams<float> params;
    params.cfg = cfg;
    params.blocks.resize(2);
    params.blocks[0] = two_cell;
    auto& fine = params.blocks[1];
    fine.grid_h = fine.grid_w = 1;
    fine.rank = 1;
    fine.arch = block_arch(cfg, ecfg, 1);  // in = 4 + width
    fine.allocate();
    // Identity on the prior feature channels: W[o][4+o] = 1.
    for (int o = 0; o < width; ++o) fine.bases[0][std::size_t(o) * (4 + width) + 4 + o] = 1.f;
    for (auto& v : fine.cell_mod_a[0]) v = 1.f;
    for (auto& v : fine.cell_mod_b[0]) v = 1.f;
    // Appearance: rgb channels copy feature 0.
    params.app.leaky_slope = kLeakySlope;
    MlpLayerParams<float> app_layer;
    app_layer.in_dim = width;
    app_layer.out_dim = 3;
    app_layer.rank = 1;
    app_layer.base.assign(3 * width, 0.f);
    for (int c = 0; c < 3; ++c) app_layer.base[std::size_t(c) * width] = 1.f;
    app_layer.mod_a.assign(3, 1.f);
    app_layer.mod_b.assign(width, 1.f);
    app_layer.bias.assign(3, 0.f);
    params.app.layers.push_back(app_layer);

    const int res = 32;
    Image img(res, res);
    Mask mask(res, res);
    for (auto& v : img.data) v = 0.25f;
    Image coarse_img = resize_bilinear(img, res / 4, res / 4);
    Mask coarse_mask = resize_bilinear(mask, res / 4, res / 4);
    std::vector<QueryLevel> levels(2);
    levels[0].plane = PlaneView{&coarse_img, &coarse_mask, res / 4, res / 4, 0, 0};
    levels[0].idx = full_index_list(res / 4, res / 4);
    levels[1].plane = PlaneView{&img, &mask, res, res, 0, 0};
    levels[1].idx = full_index_list(res, res);
    const auto rgb = decoder_forward(params, levels, ecfg);
    double lrip_jump = 0.0;
    for (int i = 0; i < res; ++i)
        for (int j = 0; j + 1 < res; ++j)
            lrip_jump = std::max(lrip_jump,
                                 std::abs(double(rgb[(std::size_t(i) * res + j + 1) * 3]) -
                                          double(rgb[(std::size_t(i) * res + j) * 3])));

    std::ostringstream d;
    d << "nearest-routing jump " << nearest_jump << " (>= 0.9), Eq.-1 jump at 1e-3 separation "
      << interp_jump << " (<= 5e-3), LRIP adjacent-pixel jump " << lrip_jump << " (< nearest)";
    return {nearest_jump >= 0.9 && interp_jump <= 5e-3 && lrip_jump < nearest_jump, d.str()};
}

// --- 8. LUT suite --------------------------------------------------------------

Outcome criterion8() {
    std::mt19937_64 rng(800);
    std::uniform_real_distribution<float> uni(0.f, 1.f);

    // Identity LUT no-op on 10,000 random colors.
    for (const int d : {2, 7}) {
        const Lut3D id = lut_identity(d);
        for (int q = 0; q < 5000; ++q) {
            const std::array<float, 3> c{uni(rng), uni(rng), uni(rng)};
            const auto out = lut_apply(id, c);
            if (out != c) return {false, "identity LUT not a no-op"};
        }
    }

    // Trilinear application vs the 8-term oracle.
    Lut3D lut(7);
    for (auto& v : lut.lattice) v = uni(rng);
    std::uniform_real_distribution<float> wide(-0.3f, 1.3f);
    for (int q = 0; q < 2000; ++q) {
        const float r = wide(rng), g = wide(rng), b = wide(rng);
        const auto got = lut_apply(lut, {r, g, b});
        const auto ref = oracles::lut_apply_naive(lut, r, g, b);
        for (int c = 0; c < 3; ++c)
            if (std::abs(double(got[c]) - double(ref[c])) >= 1e-12)
                return {false, "trilinear oracle deviation"};
    }

    // Frame interpolation endpoints and midpoint.
    Lut3D lut2(7);
    for (auto& v : lut2.lattice) v = uni(rng);
    const Lut3D at_m = lut_interp(lut, lut2, 3, 3, 11);
    const Lut3D at_n = lut_interp(lut, lut2, 11, 3, 11);
    if (at_m.lattice != lut.lattice || at_n.lattice != lut2.lattice)
        return {false, "interpolation endpoints not exact"};
    const Lut3D mid = lut_interp(lut, lut2, 7, 3, 11);
    for (std::size_t k = 0; k < mid.lattice.size(); ++k) {
        const float expect = lut.lattice[k] + (lut2.lattice[k] - lut.lattice[k]) * 0.5f;
        if (mid.lattice[k] != expect) return {false, "midpoint not exact"};
    }

    // .cube round trip.
    export_cube(lut, "acceptance_lut.cube");
    const Lut3D back = import_cube("acceptance_lut.cube");
    std::remove("acceptance_lut.cube");
    double worst = 0.0;
    for (std::size_t k = 0; k < lut.lattice.size(); ++k)
        worst = std::max(worst, std::abs(double(back.lattice[k]) - double(lut.lattice[k])));
    if (worst > 5e-7) return {false, "cube round trip deviation " + std::to_string(worst)};

    return {true, "identity no-op, oracle match <= 1e-12, Eq.-4 endpoints exact, cube round trip " +
                      std::to_string(worst)};
}

// --- 9. Overfit experiment ------------------------------------------------------

Outcome criterion9() {
    const double t0 = now_s();
    const TrainSample sample = make_synthetic_sample(64, 9001);

    FitOptions opts;
    opts.steps = 5000;
    opts.lr = 1e-3;
    opts.eval_every = 250;
    opts.seed = 1;
    const FitResult decoder_fit = fit_overfit(sample, toy_model_config(), opts);

    FitOptions lut_opts = opts;
    lut_opts.steps = 2000;
    lut_opts.mode = TrainMode::kLutOnly;
    const FitResult lut_fit = fit_overfit(sample, toy_model_config(), lut_opts);

    // Smoothed training loss (window 50) is monotone nonincreasing, up to a
    // noise floor of 1e-4 of the initial loss.
    const auto& loss = decoder_fit.loss_trace;
    std::vector<double> smoothed;
    for (std::size_t i = 0; i + 50 <= loss.size(); i += 50) {
        double acc = 0.0;
        for (std::size_t k = i; k < i + 50; ++k) acc += loss[k];
        smoothed.push_back(acc / 50.0);
    }
    double smooth_violation = 0.0;
    for (std::size_t i = 1; i < smoothed.size(); ++i)
        smooth_violation = std::max(smooth_violation, smoothed[i] - smoothed[i - 1]);
    const double noise_floor = loss.front() * 1e-4;

    const double secs = now_s() - t0;
    std::ostringstream d;
    d << "decoder " << decoder_fit.final_psnr << " dB (> 35), lut-only " << lut_fit.final_psnr
      << " dB (> 28), untrained baseline " << decoder_fit.psnr_trace.front().second
      << " dB, smoothed-loss max rise " << smooth_violation << " (floor " << noise_floor << "), "
      << secs << " s";
    const bool pass = decoder_fit.final_psnr > 35.0 && lut_fit.final_psnr > 28.0 &&
                      smooth_violation <= noise_floor && secs < 900.0;
    return {pass, d.str()};
}

// --- 10. Metric oracle agreement --------------------------------------------------

Outcome criterion10() {
    std::mt19937_64 rng(1000);
    std::uniform_real_distribution<float> uni(0.f, 1.f);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        Image a(16, 16), b(16, 16);
        Mask m(16, 16);
        for (auto& v : a.data) v = uni(rng);
        for (auto& v : b.data) v = uni(rng);
        for (auto& v : m.data) v = uni(rng) < 0.4f ? 1.f : 0.f;
        bool any_fg = false;
        for (const float v : m.data) any_fg |= v > 0.5f;
        if (!any_fg) m.data[0] = 1.f;

        auto rel = [](double x, double y) { return std::abs(x - y) / std::max(std::abs(y), 1e-12); };
        worst = std::max(worst, rel(mse(a, b), oracles::mse_naive(a, b)));
        worst = std::max(worst, rel(fmse(a, b, m), oracles::fmse_naive(a, b, m)));
        worst = std::max(worst, rel(psnr(a, b), oracles::psnr_naive(a, b)));
        worst = std::max(worst, rel(ssim(a, b), oracles::ssim_naive(a, b)));
    }
    std::ostringstream d;
    d << "50 pairs, worst relative deviation " << worst;
    return {worst < 1e-6, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int number;
        const char* name;
        std::function<Outcome()> fn;
    };
    const std::vector<Criterion> criteria = {
        {1, "Eq. 1 bilinear-MLP oracle suite", criterion1},
        {2, "gradient verification vs central differences", criterion2},
        {3, "tiled inference bitwise equal to full mode", criterion3},
        {4, "region mode equals full mode on the foreground", criterion4},
        {5, "RSC crop loss equals restricted full-image loss", criterion5},
        {6, "tiled/RSC memory properties", criterion6},
        {7, "boundary continuity (nearest vs Eq. 1 vs LRIP)", criterion7},
        {8, "3D LUT suite", criterion8},
        {9, "single-pair overfit experiment", criterion9},
        {10, "metric oracle agreement", criterion10},
    };

    std::set<int> selected;
    for (int a = 1; a < argc; ++a) selected.insert(std::atoi(argv[a]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.number)) continue;
        Outcome outcome;
        try {
            outcome = c.fn();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%s] %2d: %s — %s\n", outcome.pass ? "PASS" : "FAIL", c.number, c.name,
                    outcome.detail.c_str());
        std::fflush(stdout);
        if (!outcome.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
