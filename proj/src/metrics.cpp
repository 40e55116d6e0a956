#include "nervpp/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nervpp/common.hpp"

namespace nervpp {

namespace {

void check_same_shape(const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) throw std::invalid_argument("metric inputs must share a shape");
}

struct Planes {
    std::int64_t n, c, h, w;
    std::vector<double> v;

    static Planes from(const Tensor& t) {
        if (t.shape().size() != 4)
            throw std::invalid_argument("SSIM expects (N,C,H,W) tensors");
        const auto& s = t.shape();
        return Planes{s[0], s[1], s[2], s[3], {t.data().begin(), t.data().end()}};
    }

    const double* plane(std::int64_t i, std::int64_t j) const {
        return v.data() + (i * c + j) * h * w;
    }
};

// Mirrors the accumulation order of the differentiable SSIM in the loss
// (depthwise conv then elementwise map), so the two stay within 1e-12.
void ssim_means(const Planes& x, const Planes& y, double& mean_ssim, double& mean_cs) {
    if (x.h < kSsimWindow || x.w < kSsimWindow)
        throw DataError("frame smaller than the 11x11 SSIM window");
    const std::vector<double> g = ssim_gaussian_window();
    const std::int64_t ho = x.h - kSsimWindow + 1, wo = x.w - kSsimWindow + 1;
    double sum_ssim = 0.0, sum_cs = 0.0;
    for (std::int64_t n = 0; n < x.n; ++n)
        for (std::int64_t c = 0; c < x.c; ++c) {
            const double* px = x.plane(n, c);
            const double* py = y.plane(n, c);
            for (std::int64_t oh = 0; oh < ho; ++oh)
                for (std::int64_t ow = 0; ow < wo; ++ow) {
                    double mux = 0.0, muy = 0.0, exx = 0.0, eyy = 0.0, exy = 0.0;
                    for (int kh = 0; kh < kSsimWindow; ++kh)
                        for (int kw = 0; kw < kSsimWindow; ++kw) {
                            const double wk = g[kh * kSsimWindow + kw];
                            const double a = px[(oh + kh) * x.w + (ow + kw)];
                            const double b = py[(oh + kh) * x.w + (ow + kw)];
                            mux += wk * a;
                            muy += wk * b;
                            exx += wk * (a * a);
                            eyy += wk * (b * b);
                            exy += wk * (a * b);
                        }
                    const double sigx = exx - mux * mux;
                    const double sigy = eyy - muy * muy;
                    const double sigxy = exy - mux * muy;
                    const double t1 = 2.0 * (mux * muy) + kSsimC1;
                    const double t2 = 2.0 * sigxy + kSsimC2;
                    const double d1 = (mux * mux + muy * muy) + kSsimC1;
                    const double d2 = (sigx + sigy) + kSsimC2;
                    sum_cs += t2 / d2;
                    sum_ssim += (t1 * t2) / (d1 * d2);
                }
        }
    const double cnt = static_cast<double>(x.n * x.c * ho * wo);
    mean_ssim = sum_ssim / cnt;
    mean_cs = sum_cs / cnt;
}

Planes avg_pool2(const Planes& x) {
    Planes out{x.n, x.c, x.h / 2, x.w / 2, {}};
    out.v.resize(static_cast<std::size_t>(out.n * out.c * out.h * out.w));
    double* o = out.v.data();
    for (std::int64_t n = 0; n < x.n; ++n)
        for (std::int64_t c = 0; c < x.c; ++c) {
            const double* p = x.plane(n, c);
            for (std::int64_t oh = 0; oh < out.h; ++oh)
                for (std::int64_t ow = 0; ow < out.w; ++ow)
                    *o++ = (p[2 * oh * x.w + 2 * ow] + p[2 * oh * x.w + 2 * ow + 1] +
                            p[(2 * oh + 1) * x.w + 2 * ow] +
                            p[(2 * oh + 1) * x.w + 2 * ow + 1]) /
                           4.0;
        }
    return out;
}

void validate_curve(const RDCurve& c, const char* which) {
    if (c.size() < 4) throw DataError(std::string(which) + " curve needs at least 4 points");
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!(c[i].bpp > 0.0) || !std::isfinite(c[i].bpp) || !std::isfinite(c[i].quality))
            throw DataError(std::string(which) + " curve has a non-finite or non-positive point");
        if (i > 0 && (c[i].bpp <= c[i - 1].bpp || c[i].quality <= c[i - 1].quality))
            throw DataError(std::string(which) +
                            " curve must be strictly increasing in bpp and quality");
    }
}

// Least-squares cubic through (u, v): normal equations + partial-pivot
// elimination. Strictly increasing u keeps this well posed.
std::array<double, 4> fit_cubic(const std::vector<double>& u, const std::vector<double>& v) {
    double a[4][5] = {};
    for (std::size_t i = 0; i < u.size(); ++i) {
        double up[7];
        up[0] = 1.0;
        for (int k = 1; k < 7; ++k) up[k] = up[k - 1] * u[i];
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) a[r][c] += up[r + c];
            a[r][4] += v[i] * up[r];
        }
    }
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-300) throw NumericError("degenerate rate-distortion fit");
        if (piv != col)
            for (int c = 0; c < 5; ++c) std::swap(a[piv][c], a[col][c]);
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (int c = col; c < 5; ++c) a[r][c] -= f * a[col][c];
        }
    }
    return {a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]};
}

double integrate(const std::array<double, 4>& c, double lo, double hi) {
    double acc = 0.0, plo = lo, phi = hi;
    for (int k = 0; k < 4; ++k) {
        acc += c[k] * (phi - plo) / (k + 1);
        plo *= lo;
        phi *= hi;
    }
    return acc;
}

// Mean gap between two cubic fits of (axis, value) over the overlapping
// axis range; axis values are centered on the overlap midpoint before
// fitting to keep the normal equations conditioned.
double bd_mean_gap(std::vector<double> ua, std::vector<double> va, std::vector<double> ut,
                   std::vector<double> vt) {
    const double lo = std::max(ua.front(), ut.front());
    const double hi = std::min(ua.back(), ut.back());
    if (!(hi > lo)) throw DataError("rate-distortion curves do not overlap");
    const double mid = 0.5 * (lo + hi);
    for (double& u : ua) u -= mid;
    for (double& u : ut) u -= mid;
    const auto ca = fit_cubic(ua, va);
    const auto ct = fit_cubic(ut, vt);
    std::array<double, 4> d;
    for (int k = 0; k < 4; ++k) d[k] = ct[k] - ca[k];
    return integrate(d, lo - mid, hi - mid) / (hi - lo);
}

}  // namespace

std::vector<double> ssim_gaussian_window() {
    std::vector<double> g(kSsimWindow * kSsimWindow);
    const int r = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i)
        for (int j = 0; j < kSsimWindow; ++j) {
            const double di = i - r, dj = j - r;
            g[i * kSsimWindow + j] = std::exp(-(di * di + dj * dj) / (2.0 * kSsimSigma * kSsimSigma));
            sum += g[i * kSsimWindow + j];
        }
    for (double& v : g) v /= sum;
    return g;
}

double psnr(const Tensor& x, const Tensor& y) {
    check_same_shape(x, y);
    const auto a = x.data(), b = y.data();
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

double ssim(const Tensor& x, const Tensor& y) {
    check_same_shape(x, y);
    double s = 0.0, cs = 0.0;
    ssim_means(Planes::from(x), Planes::from(y), s, cs);
    return s;
}

double ms_ssim(const Tensor& x, const Tensor& y, int max_scales) {
    check_same_shape(x, y);
    if (max_scales < 1 || max_scales > 5)
        throw std::invalid_argument("ms_ssim supports 1..5 scales");
    Planes px = Planes::from(x), py = Planes::from(y);

    static constexpr double kW[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    const std::int64_t side = std::min(px.h, px.w);
    int scales = 0;
    while (scales < max_scales && side >= static_cast<std::int64_t>(kSsimWindow) << scales)
        ++scales;
    if (scales == 0) throw DataError("frame smaller than the 11x11 SSIM window");

    double wsum = 0.0;
    for (int i = 0; i < scales; ++i) wsum += kW[i];

    double result = 1.0;
    for (int i = 0; i < scales; ++i) {
        double s = 0.0, cs = 0.0;
        ssim_means(px, py, s, cs);
        const double term = (i + 1 == scales) ? s : cs;
        result *= std::pow(std::max(term, 0.0), kW[i] / wsum);
        if (i + 1 < scales) {
            px = avg_pool2(px);
            py = avg_pool2(py);
        }
    }
    return result;
}

double bpp(std::int64_t stream_bytes, std::int64_t t, std::int64_t h, std::int64_t w) {
    if (t <= 0 || h <= 0 || w <= 0) throw DataError("bpp requires positive video dimensions");
    if (stream_bytes < 0) throw std::invalid_argument("negative stream size");
    return 8.0 * static_cast<double>(stream_bytes) / static_cast<double>(t * h * w);
}

double bd_rate(const RDCurve& anchor, const RDCurve& test) {
    validate_curve(anchor, "anchor");
    validate_curve(test, "test");
    std::vector<double> ua, va, ut, vt;
    for (const auto& p : anchor) ua.push_back(p.quality), va.push_back(std::log10(p.bpp));
    for (const auto& p : test) ut.push_back(p.quality), vt.push_back(std::log10(p.bpp));
    const double d = bd_mean_gap(std::move(ua), std::move(va), std::move(ut), std::move(vt));
    return (std::pow(10.0, d) - 1.0) * 100.0;
}

double bd_psnr(const RDCurve& anchor, const RDCurve& test) {
    validate_curve(anchor, "anchor");
    validate_curve(test, "test");
    std::vector<double> ua, va, ut, vt;
    for (const auto& p : anchor) ua.push_back(std::log10(p.bpp)), va.push_back(p.quality);
    for (const auto& p : test) ut.push_back(std::log10(p.bpp)), vt.push_back(p.quality);
    return bd_mean_gap(std::move(ua), std::move(va), std::move(ut), std::move(vt));
}

}  // namespace nervpp
