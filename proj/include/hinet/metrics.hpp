#pragma once

#include "hinet/image.hpp"

namespace hinet {

// Evaluation metrics on the 0..255 scale (pixels are stored in [0,1] and
// multiplied by 255 before squaring), matching the harmonization literature.
struct MetricReport {
    double mse = 0.0;
    double fmse = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    bool has_fmse = false;
};

inline constexpr double kPsnrCapDb = 100.0;

double mse(const Image& a, const Image& b);
// Foreground-only MSE; requires at least one pixel with mask > 0.5.
double fmse(const Image& a, const Image& b, const Mask& m);
double psnr(const Image& a, const Image& b, double cap_db = kPsnrCapDb);
// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5), channel
// averaged; requires dims >= 11x11.
double ssim(const Image& a, const Image& b);

MetricReport compute_metrics(const Image& a, const Image& b, const Mask* mask = nullptr);

}  // namespace hinet
