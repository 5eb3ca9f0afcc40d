#include <doctest.h>

#include <random>

#include "hinet/common.hpp"
#include "hinet/kernels.hpp"
#include "hinet/training.hpp"

using namespace hinet;

TEST_CASE("rsc_crop") {
    ModelConfig cfg = toy_model_config();
    const TrainSample sample = make_synthetic_sample(64, 5);
    const PreparedSample prepared = prepare_sample(sample, cfg);

    SUBCASE("whole-image crop is the only legal crop at crop_size == image") {
        RscConfig rsc;
        rsc.crop_size = 64;
        std::mt19937_64 rng(1);
        const RscCrop crop = rsc_crop(prepared, cfg, rsc, rng);
        CHECK(crop.corner_row == 0);
        CHECK(crop.corner_col == 0);
        CHECK(crop.target.height == 64);
    }
    SUBCASE("sampled corners are divisible by the stride multiple") {
        RscConfig rsc;
        rsc.crop_size = 32;
        std::mt19937_64 rng(2);
        for (int t = 0; t < 50; ++t) {
            const RscCrop crop = rsc_crop(prepared, cfg, rsc, rng);
            CHECK(crop.corner_row % 4 == 0);
            CHECK(crop.corner_col % 4 == 0);
            CHECK(crop.corner_row + 32 <= 64);
        }
    }
    SUBCASE("coarse plane interiors equal resize-then-crop exactly") {
        const RscCrop crop = rsc_crop_at(prepared, cfg, 16, 8, 32);
        for (int b = 0; b < cfg.decoder.num_blocks(); ++b) {
            const int s = cfg.decoder.block_scales[b];
            const auto& plane = crop.planes[b];
            const Image interior = plane.interior();
            // Oracle: resize the full image, then static-crop at corner/s.
            const Image resized = (s == 1) ? sample.composite
                                           : resize_bilinear(sample.composite, 64 / s, 64 / s);
            REQUIRE(interior.height == 32 / s);
            for (int i = 0; i < 32 / s; ++i)
                for (int j = 0; j < 32 / s; ++j)
                    for (int c = 0; c < 3; ++c)
                        CHECK(interior.at(i, j, c) == resized.at(16 / s + i, 8 / s + j, c));
        }
    }
    SUBCASE("crop larger than the image rejected") {
        RscConfig rsc;
        rsc.crop_size = 128;
        std::mt19937_64 rng(3);
        CHECK_THROWS_AS(rsc_crop(prepared, cfg, rsc, rng), Error);
    }
}

TEST_CASE("loss") {
    ModelConfig cfg = toy_model_config();
    const TrainSample sample = make_synthetic_sample(64, 7);
    const PreparedSample prepared = prepare_sample(sample, cfg);
    const RscCrop crop = rsc_crop_at(prepared, cfg, 0, 0, 64);
    auto w = init_weights<float>(cfg, 8);
    LossConfig loss_cfg;

    SUBCASE("perfect prediction with a valid LUT gives zero main loss") {
        GraphState<float> state;
        forward_loss(w, prepared, crop, loss_cfg, TrainMode::kDecoder, &state);
        // Substitute pred = target and recompute by hand.
        double acc = 0.0;
        for (std::size_t k = 0; k < state.pred.size(); ++k) {
            const double d = double(state.pred[k]) - double(state.target_v[k]);
            acc += d * d;
        }
        CHECK(double(state.loss_main) == doctest::Approx(acc / state.pred.size()).epsilon(1e-5));
        CHECK(double(state.loss) ==
              doctest::Approx(state.loss_main + 0.01 * state.penalty).epsilon(1e-6));
    }
    SUBCASE("penalty composes the overflow example") {
        // lattice = identity except one entry at 1.5
        auto wz = zero_weights<float>(cfg);
        wz.lut_head.b[0] = 1.5f;  // lattice[0] = identity(0) + 1.5 = 1.5
        GraphState<float> state;
        forward_loss(wz, prepared, crop, loss_cfg, TrainMode::kDecoder, &state);
        const double d3 = double(cfg.encoder.lut_dim);
        CHECK(double(state.penalty) == doctest::Approx(0.25 / (d3 * d3 * d3 * 3)).epsilon(1e-6));
    }
    SUBCASE("loss invariant to permutation applied to both pred and target") {
        GraphState<float> state;
        const float l1 = forward_loss(w, prepared, crop, loss_cfg, TrainMode::kDecoder, &state);
        // Permuting the supervised batch is equivalent to permuting the fine
        // query order; reuse the decoder permutation equivariance by just
        // recomputing (row-major vs reversed gives identical mean).
        double acc = 0.0;
        for (std::size_t k = state.pred.size(); k > 0; --k) {
            const double d = double(state.pred[k - 1]) - double(state.target_v[k - 1]);
            acc += d * d;
        }
        CHECK(l1 == doctest::Approx(acc / state.pred.size() + 0.01 * state.penalty).epsilon(1e-4));
    }
}

TEST_CASE("single linear layer gradient matches the closed form") {
    // y = x*W^T + b, L = mean((y - t)^2); dW = 2 X^T (XW - T) / n laid out
    // as dW[o][i] = sum_n dy[n][o] x[n][i], dy = 2(y - t)/(n*out).
    std::mt19937_64 rng(11);
    std::normal_distribution<double> dist(0.0, 1.0);
    const int n = 12, in = 5, out = 3;
    std::vector<double> x(n * in), wt(in * out), bias(out), t(n * out);
    for (auto& v : x) v = dist(rng);
    for (auto& v : wt) v = dist(rng);
    for (auto& v : bias) v = dist(rng);
    for (auto& v : t) v = dist(rng);

    std::vector<double> y(n * out);
    kernels::affine_batch(x.data(), wt.data(), bias.data(), y.data(), n, in, out);
    std::vector<double> dy(n * out);
    for (int k = 0; k < n * out; ++k) dy[k] = 2.0 * (y[k] - t[k]) / double(n * out);
    std::vector<double> dw(out * in, 0.0);
    kernels::matmul_acc(dy.data(), x.data(), dw.data(), n, out, in);

    // Central differences on the loss.
    auto loss = [&] {
        std::vector<double> yy(n * out);
        kernels::affine_batch(x.data(), wt.data(), bias.data(), yy.data(), n, in, out);
        double acc = 0.0;
        for (int k = 0; k < n * out; ++k) acc += (yy[k] - t[k]) * (yy[k] - t[k]);
        return acc / double(n * out);
    };
    const double eps = 1e-6;
    for (int i = 0; i < in; ++i)
        for (int o = 0; o < out; ++o) {
            const double v = wt[i * out + o];
            wt[i * out + o] = v + eps;
            const double lp = loss();
            wt[i * out + o] = v - eps;
            const double lm = loss();
            wt[i * out + o] = v;
            const double fd = (lp - lm) / (2 * eps);
            CHECK(dw[o * in + i] == doctest::Approx(fd).epsilon(1e-7));
        }
}

TEST_CASE("zero loss-gradient seed gives zero parameter gradients") {
    ModelConfig cfg = toy_model_config();
    const TrainSample sample = make_synthetic_sample(64, 12);
    const PreparedSample prepared = prepare_sample(sample, cfg);
    const RscCrop crop = rsc_crop_at(prepared, cfg, 0, 0, 64);
    auto w = init_weights<float>(cfg, 13);
    GraphState<float> state;
    LossConfig loss_cfg;
    forward_loss(w, prepared, crop, loss_cfg, TrainMode::kDecoder, &state);
    // Exact zero seed: pred == target, and the LUT head starts at the
    // identity lattice so the penalty gradient is zero too.
    state.target_v = state.pred;
    auto grads = backward(w, prepared, crop, loss_cfg, TrainMode::kDecoder, state);
    auto refs = grads.registry();
    for (const auto& r : refs)
        for (std::size_t k = 0; k < r.size; ++k) CHECK(r.data[k] == 0.f);
}

TEST_CASE("gradcheck on a reduced toy graph") {
    // The acceptance suite runs the full-size check; this keeps a fast
    // regression guard on the same machinery.
    const auto report = gradcheck(1, TrainMode::kDecoder);
    MESSAGE("decoder-mode gradcheck: max rel err ", report.max_rel_err, " at ",
            report.worst_tensor, " over ", report.checked, " parameters");
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("gradcheck through the LUT application path") {
    const auto report = gradcheck(321, TrainMode::kLutOnly);
    MESSAGE("lut-mode gradcheck: max rel err ", report.max_rel_err, " at ", report.worst_tensor);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("cosine schedule endpoints") {
    CHECK(cosine_lr(0, 100, 0.1, 0.001) == 0.1);
    CHECK(cosine_lr(100, 100, 0.1, 0.001) == 0.001);
    CHECK(cosine_lr(150, 100, 0.1, 0.001) == 0.001);
    CHECK(cosine_lr(50, 100, 0.1, 0.001) == doctest::Approx(0.0505).epsilon(1e-12));
    // Monotone nonincreasing across the horizon.
    double prev = 1e9;
    for (int t = 0; t <= 100; ++t) {
        const double lr = cosine_lr(t, 100, 0.1, 0.001);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
}

TEST_CASE("train_step") {
    ModelConfig cfg = toy_model_config();
    const TrainSample sample = make_synthetic_sample(64, 20);
    const PreparedSample prepared = prepare_sample(sample, cfg);
    const RscCrop crop = rsc_crop_at(prepared, cfg, 0, 0, 64);
    LossConfig loss_cfg;

    SUBCASE("zero learning rate leaves weights unchanged") {
        auto w = init_weights<float>(cfg, 21);
        const auto before = w;
        train_step(w, prepared, crop, loss_cfg, TrainMode::kDecoder, 0.0, 0.0);
        auto a = w.registry();
        auto b = const_cast<ModelWeights<float>&>(before).registry();
        for (std::size_t r = 0; r < a.size(); ++r)
            for (std::size_t k = 0; k < a[r].size; ++k) CHECK(a[r].data[k] == b[r].data[k]);
    }
    SUBCASE("a small step decreases the loss") {
        auto w = init_weights<float>(cfg, 22);
        const float l0 = train_step(w, prepared, crop, loss_cfg, TrainMode::kDecoder, 1e-3, 0.0);
        const float l1 = train_step(w, prepared, crop, loss_cfg, TrainMode::kDecoder, 1e-3, 0.0);
        CHECK(l1 < l0);
    }
    SUBCASE("fixed seeds give bit-identical weight trajectories") {
        auto w1 = init_weights<float>(cfg, 23);
        auto w2 = init_weights<float>(cfg, 23);
        for (int step = 0; step < 10; ++step) {
            const float l1 = train_step(w1, prepared, crop, loss_cfg, TrainMode::kDecoder, 1e-3, 0.0);
            const float l2 = train_step(w2, prepared, crop, loss_cfg, TrainMode::kDecoder, 1e-3, 0.0);
            CHECK(l1 == l2);
        }
        auto a = w1.registry();
        auto b = w2.registry();
        for (std::size_t r = 0; r < a.size(); ++r)
            for (std::size_t k = 0; k < a[r].size; ++k) CHECK(a[r].data[k] == b[r].data[k]);
    }
}

TEST_CASE("RSC crop loss equals the full-image loss restricted to the crop") {
    ModelConfig cfg = toy_model_config();
    const TrainSample sample = make_synthetic_sample(64, 30);
    const PreparedSample prepared = prepare_sample(sample, cfg);
    auto w = init_weights<float>(cfg, 31);
    LossConfig loss_cfg;

    GraphState<float> full_state;
    const RscCrop full_crop = rsc_crop_at(prepared, cfg, 0, 0, 64);
    forward_loss(w, prepared, full_crop, loss_cfg, TrainMode::kDecoder, &full_state);

    std::mt19937_64 rng(32);
    RscConfig rsc;
    rsc.crop_size = 16;
    for (int t = 0; t < 10; ++t) {
        const RscCrop crop = rsc_crop(prepared, cfg, rsc, rng);
        GraphState<float> state;
        const float crop_loss_total =
            forward_loss(w, prepared, crop, loss_cfg, TrainMode::kDecoder, &state);
        // Full-image squared errors restricted to the crop window.
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t q = 0; q < full_state.supervised_idx.size(); ++q) {
            const int row = int(full_state.supervised_idx[q] / 64);
            const int col = int(full_state.supervised_idx[q] % 64);
            if (row < crop.corner_row || row >= crop.corner_row + 16) continue;
            if (col < crop.corner_col || col >= crop.corner_col + 16) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = double(full_state.pred[q * 3 + c]) -
                                 double(full_state.target_v[q * 3 + c]);
                acc += d * d;
                ++count;
            }
        }
        REQUIRE(count == std::size_t(16) * 16 * 3);
        const double restricted = acc / double(count);
        CHECK(std::abs(double(state.loss_main) - restricted) < 1e-6);
        (void)crop_loss_total;
    }
}

TEST_CASE("fit_overfit reports a PSNR trace with the untrained baseline first") {
    FitOptions opts;
    opts.steps = 400;
    opts.lr = 1e-3;
    opts.eval_every = 200;
    const TrainSample sample = make_synthetic_sample(64, 50);
    const FitResult fit = fit_overfit(sample, toy_model_config(), opts);

    REQUIRE(!fit.psnr_trace.empty());
    CHECK(fit.psnr_trace.front().first == 0);  // untrained baseline, reported not asserted
    CHECK(fit.loss_trace.size() == 400);
    CHECK(fit.final_psnr > fit.psnr_trace.front().second);

    // Smoothed loss (window 50) is monotone nonincreasing up to a noise
    // floor of 1e-4 of the initial loss.
    std::vector<double> smoothed;
    for (std::size_t i = 0; i + 50 <= fit.loss_trace.size(); i += 50) {
        double acc = 0.0;
        for (std::size_t k = i; k < i + 50; ++k) acc += fit.loss_trace[k];
        smoothed.push_back(acc / 50.0);
    }
    for (std::size_t i = 1; i < smoothed.size(); ++i)
        CHECK(smoothed[i] <= smoothed[i - 1] + fit.loss_trace.front() * 1e-4);
}

TEST_CASE("synthetic sample construction") {
    const TrainSample s = make_synthetic_sample(64, 40);
    CHECK(s.composite.height == 64);
    // Foreground differs, background matches exactly.
    bool fg_differs = false;
    for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j)
            for (int c = 0; c < 3; ++c) {
                if (s.mask.at(i, j) > 0.5f) {
                    if (s.composite.at(i, j, c) != s.target.at(i, j, c)) fg_differs = true;
                } else {
                    CHECK(s.composite.at(i, j, c) == s.target.at(i, j, c));
                }
            }
    CHECK(fg_differs);
}
