#pragma once

#include <cstdint>
#include <vector>

#include "nervpp/tensor.hpp"

namespace nervpp {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Normalized 11x11 Gaussian (sigma 1.5), row-major; shared with the
// differentiable SSIM used by the training loss.
std::vector<double> ssim_gaussian_window();

// -10*log10(MSE) with peak 1 over every element; +inf when MSE is 0.
double psnr(const Tensor& x, const Tensor& y);

// Single-scale SSIM on (N,C,H,W): 11x11 Gaussian window, valid positions
// only, per-channel maps averaged together. Requires min(H,W) >= 11.
double ssim(const Tensor& x, const Tensor& y);

// Multi-scale SSIM, dyadic 2x average-pool pyramid, standard five weights
// renormalized when the resolution supports fewer scales. max_scales caps
// the pyramid depth (1 reduces to plain ssim).
double ms_ssim(const Tensor& x, const Tensor& y, int max_scales = 5);

// 8*bytes / (T*H*W)
double bpp(std::int64_t stream_bytes, std::int64_t t, std::int64_t h, std::int64_t w);

struct RDPoint {
    double bpp = 0.0;
    double quality = 0.0;
};

// Strictly increasing in both bpp and quality, at least 4 points.
using RDCurve = std::vector<RDPoint>;

// Bjontegaard rate delta in percent: cubic fit of log10(bpp) over quality
// for each curve, mean gap over the overlapping quality range, mapped
// through (10^d - 1)*100.
double bd_rate(const RDCurve& anchor, const RDCurve& test);

// Quality delta in dB over the overlapping log-rate range.
double bd_psnr(const RDCurve& anchor, const RDCurve& test);

}  // namespace nervpp
