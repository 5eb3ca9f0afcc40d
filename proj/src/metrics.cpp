#include "hinet/metrics.hpp"

#include <cmath>
#include <vector>

#include "hinet/common.hpp"

namespace hinet {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

void check_dims(const Image& a, const Image& b) {
    require(a.height == b.height && a.width == b.width, "metrics: image dimension mismatch");
    require(a.height >= 1 && a.width >= 1, "metrics: empty image");
}

std::vector<double> gaussian_window() {
    std::vector<double> g(kWindow);
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - (kWindow - 1) / 2.0;
        g[i] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
}

// Valid-mode separable convolution, horizontal then vertical.
std::vector<double> blur_valid(const std::vector<double>& src, int h, int w,
                               const std::vector<double>& g) {
    const int wo = w - kWindow + 1;
    const int ho = h - kWindow + 1;
    std::vector<double> tmp(std::size_t(h) * wo);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < wo; ++j) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k) acc += g[k] * src[std::size_t(i) * w + j + k];
            tmp[std::size_t(i) * wo + j] = acc;
        }
    std::vector<double> out(std::size_t(ho) * wo);
    for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
            double acc = 0.0;
            for (int k = 0; k < kWindow; ++k) acc += g[k] * tmp[std::size_t(i + k) * wo + j];
            out[std::size_t(i) * wo + j] = acc;
        }
    return out;
}

}  // namespace

double mse(const Image& a, const Image& b) {
    check_dims(a, b);
    const std::size_t n = a.data.size();
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double d = (double(a.data[k]) - double(b.data[k])) * 255.0;
        acc += d * d;
    }
    return acc / double(n);
}

double fmse(const Image& a, const Image& b, const Mask& m) {
    check_dims(a, b);
    require(m.height == a.height && m.width == a.width, "fmse: mask dimension mismatch");
    double acc = 0.0;
    std::size_t count = 0;
    const std::size_t pixels = a.pixel_count();
    for (std::size_t p = 0; p < pixels; ++p) {
        if (m.data[p] > kForegroundThreshold) {
            for (int c = 0; c < 3; ++c) {
                const double d = (double(a.data[p * 3 + c]) - double(b.data[p * 3 + c])) * 255.0;
                acc += d * d;
            }
            count += 3;
        }
    }
    require(count > 0, "fmse: empty foreground");
    return acc / double(count);
}

double psnr(const Image& a, const Image& b, double cap_db) {
    const double err = mse(a, b);
    if (err == 0.0) return cap_db;
    return 10.0 * std::log10(255.0 * 255.0 / err);
}

double ssim(const Image& a, const Image& b) {
    check_dims(a, b);
    require(a.height >= kWindow && a.width >= kWindow, "ssim: image smaller than 11x11 window");
    const auto g = gaussian_window();
    const int h = a.height, w = a.width;
    const std::size_t n = std::size_t(h) * w;

    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
        for (std::size_t p = 0; p < n; ++p) {
            const double va = double(a.data[p * 3 + c]) * 255.0;
            const double vb = double(b.data[p * 3 + c]) * 255.0;
            pa[p] = va;
            pb[p] = vb;
            paa[p] = va * va;
            pbb[p] = vb * vb;
            pab[p] = va * vb;
        }
        const auto mu_a = blur_valid(pa, h, w, g);
        const auto mu_b = blur_valid(pb, h, w, g);
        const auto m_aa = blur_valid(paa, h, w, g);
        const auto m_bb = blur_valid(pbb, h, w, g);
        const auto m_ab = blur_valid(pab, h, w, g);

        double acc = 0.0;
        for (std::size_t k = 0; k < mu_a.size(); ++k) {
            const double ma = mu_a[k], mb = mu_b[k];
            const double va = m_aa[k] - ma * ma;
            const double vb = m_bb[k] - mb * mb;
            const double cov = m_ab[k] - ma * mb;
            acc += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                   ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
        }
        total += acc / double(mu_a.size());
    }
    return total / 3.0;
}

MetricReport compute_metrics(const Image& a, const Image& b, const Mask* mask) {
    MetricReport r;
    r.mse = mse(a, b);
    r.psnr = psnr(a, b);
    r.ssim = ssim(a, b);
    if (mask) {
        r.fmse = fmse(a, b, *mask);
        r.has_fmse = true;
    }
    return r;
}

}  // namespace hinet
