#include "nervpp/kernels.hpp"

#include <cmath>

// Plain single-threaded loops, kept as the reference the OpenMP kernels
// are tested against. Per-element accumulation order must stay in sync
// with kernels_omp.cpp.

namespace nervpp::kern::serial {

namespace {

using std::int64_t;

inline void src_coord(int64_t dst, int64_t scale, int64_t size, int64_t& i0,
                      int64_t& i1, double& f) {
    double src = (static_cast<double>(dst) + 0.5) / static_cast<double>(scale) - 0.5;
    if (src < 0.0) src = 0.0;
    const double last = static_cast<double>(size - 1);
    if (src > last) src = last;
    const double fl = std::floor(src);
    i0 = static_cast<int64_t>(fl);
    i1 = i0 + 1 < size ? i0 + 1 : size - 1;
    f = src - fl;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

void conv2d_forward(const double* x, const double* w, const double* bias,
                    double* y, const Conv2dShape& s) {
    const int64_t ho = s.hout(), wo = s.wout();
    const int64_t cin_g = s.cin / s.groups;
    const int64_t cout_g = s.cout / s.groups;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t co = 0; co < s.cout; ++co)
            for (int64_t oh = 0; oh < ho; ++oh) {
                const int64_t ci0 = (co / cout_g) * cin_g;
                for (int64_t ow = 0; ow < wo; ++ow) {
                    double acc = bias ? bias[co] : 0.0;
                    for (int64_t ci = 0; ci < cin_g; ++ci)
                        for (int64_t kh = 0; kh < s.kh; ++kh) {
                            const int64_t ih = oh * s.stride - s.pad + kh;
                            if (ih < 0 || ih >= s.hin) continue;
                            for (int64_t kw = 0; kw < s.kw; ++kw) {
                                const int64_t iw = ow * s.stride - s.pad + kw;
                                if (iw < 0 || iw >= s.win) continue;
                                acc += x[((n * s.cin + ci0 + ci) * s.hin + ih) * s.win + iw] *
                                       w[((co * cin_g + ci) * s.kh + kh) * s.kw + kw];
                            }
                        }
                    y[((n * s.cout + co) * ho + oh) * wo + ow] = acc;
                }
            }
}

void conv2d_backward_input(const double* gy, const double* w, double* gx,
                           const Conv2dShape& s) {
    const int64_t ho = s.hout(), wo = s.wout();
    const int64_t cin_g = s.cin / s.groups;
    const int64_t cout_g = s.cout / s.groups;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t ci = 0; ci < s.cin; ++ci)
            for (int64_t ih = 0; ih < s.hin; ++ih) {
                const int64_t g = ci / cin_g;
                const int64_t co0 = g * cout_g;
                const int64_t cig = ci - g * cin_g;
                for (int64_t iw = 0; iw < s.win; ++iw) {
                    double acc = 0.0;
                    for (int64_t cof = 0; cof < cout_g; ++cof) {
                        const int64_t co = co0 + cof;
                        for (int64_t kh = 0; kh < s.kh; ++kh) {
                            const int64_t th = ih + s.pad - kh;
                            if (th < 0 || th % s.stride != 0) continue;
                            const int64_t oh = th / s.stride;
                            if (oh >= ho) continue;
                            for (int64_t kw = 0; kw < s.kw; ++kw) {
                                const int64_t tw = iw + s.pad - kw;
                                if (tw < 0 || tw % s.stride != 0) continue;
                                const int64_t ow = tw / s.stride;
                                if (ow >= wo) continue;
                                acc += gy[((n * s.cout + co) * ho + oh) * wo + ow] *
                                       w[((co * cin_g + cig) * s.kh + kh) * s.kw + kw];
                            }
                        }
                    }
                    gx[((n * s.cin + ci) * s.hin + ih) * s.win + iw] += acc;
                }
            }
}

void conv2d_backward_weight(const double* gy, const double* x, double* gw,
                            const Conv2dShape& s) {
    const int64_t ho = s.hout(), wo = s.wout();
    const int64_t cin_g = s.cin / s.groups;
    const int64_t cout_g = s.cout / s.groups;
    for (int64_t co = 0; co < s.cout; ++co)
        for (int64_t cig = 0; cig < cin_g; ++cig)
            for (int64_t kh = 0; kh < s.kh; ++kh)
                for (int64_t kw = 0; kw < s.kw; ++kw) {
                    const int64_t ci = (co / cout_g) * cin_g + cig;
                    double acc = 0.0;
                    for (int64_t n = 0; n < s.n; ++n)
                        for (int64_t oh = 0; oh < ho; ++oh) {
                            const int64_t ih = oh * s.stride - s.pad + kh;
                            if (ih < 0 || ih >= s.hin) continue;
                            for (int64_t ow = 0; ow < wo; ++ow) {
                                const int64_t iw = ow * s.stride - s.pad + kw;
                                if (iw < 0 || iw >= s.win) continue;
                                acc += gy[((n * s.cout + co) * ho + oh) * wo + ow] *
                                       x[((n * s.cin + ci) * s.hin + ih) * s.win + iw];
                            }
                        }
                    gw[((co * cin_g + cig) * s.kh + kh) * s.kw + kw] += acc;
                }
}

void conv2d_backward_bias(const double* gy, double* gb, const Conv2dShape& s) {
    const int64_t ho = s.hout(), wo = s.wout();
    for (int64_t co = 0; co < s.cout; ++co) {
        double acc = 0.0;
        for (int64_t n = 0; n < s.n; ++n)
            for (int64_t oh = 0; oh < ho; ++oh)
                for (int64_t ow = 0; ow < wo; ++ow)
                    acc += gy[((n * s.cout + co) * ho + oh) * wo + ow];
        gb[co] += acc;
    }
}

void pixel_shuffle_forward(const double* x, double* y, const ShuffleShape& s) {
    const int64_t r = s.r, cin = s.c * r * r;
    const int64_t H = s.h * r, W = s.w * r;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t hy = 0; hy < H; ++hy)
                for (int64_t wy = 0; wy < W; ++wy) {
                    const int64_t h = hy / r, i = hy % r;
                    const int64_t w = wy / r, j = wy % r;
                    y[((n * s.c + c) * H + hy) * W + wy] =
                        x[((n * cin + c * r * r + i * r + j) * s.h + h) * s.w + w];
                }
}

void pixel_shuffle_backward(const double* gy, double* gx, const ShuffleShape& s) {
    const int64_t r = s.r, cin = s.c * r * r;
    const int64_t H = s.h * r, W = s.w * r;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t cq = 0; cq < cin; ++cq)
            for (int64_t h = 0; h < s.h; ++h)
                for (int64_t w = 0; w < s.w; ++w) {
                    const int64_t c = cq / (r * r);
                    const int64_t rem = cq % (r * r);
                    gx[((n * cin + cq) * s.h + h) * s.w + w] +=
                        gy[((n * s.c + c) * H + h * r + rem / r) * W + w * r + rem % r];
                }
}

void bilinear_forward(const double* x, double* y, const Resize2dShape& s) {
    const int64_t H = s.h * s.scale, W = s.w * s.scale;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c) {
            const double* p = x + (n * s.c + c) * s.h * s.w;
            double* q = y + (n * s.c + c) * H * W;
            for (int64_t oy = 0; oy < H; ++oy) {
                int64_t y0, y1;
                double fy;
                src_coord(oy, s.scale, s.h, y0, y1, fy);
                for (int64_t ox = 0; ox < W; ++ox) {
                    int64_t x0, x1;
                    double fx;
                    src_coord(ox, s.scale, s.w, x0, x1, fx);
                    const double top = (1.0 - fx) * p[y0 * s.w + x0] + fx * p[y0 * s.w + x1];
                    const double bot = (1.0 - fx) * p[y1 * s.w + x0] + fx * p[y1 * s.w + x1];
                    q[oy * W + ox] = (1.0 - fy) * top + fy * bot;
                }
            }
        }
}

void bilinear_backward(const double* gy, double* gx, const Resize2dShape& s) {
    const int64_t H = s.h * s.scale, W = s.w * s.scale;
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c) {
            double* p = gx + (n * s.c + c) * s.h * s.w;
            const double* q = gy + (n * s.c + c) * H * W;
            for (int64_t oy = 0; oy < H; ++oy) {
                int64_t y0, y1;
                double fy;
                src_coord(oy, s.scale, s.h, y0, y1, fy);
                for (int64_t ox = 0; ox < W; ++ox) {
                    int64_t x0, x1;
                    double fx;
                    src_coord(ox, s.scale, s.w, x0, x1, fx);
                    const double g = q[oy * W + ox];
                    p[y0 * s.w + x0] += (1.0 - fy) * (1.0 - fx) * g;
                    p[y0 * s.w + x1] += (1.0 - fy) * fx * g;
                    p[y1 * s.w + x0] += fy * (1.0 - fx) * g;
                    p[y1 * s.w + x1] += fy * fx * g;
                }
            }
        }
}

void gelu_forward(const double* x, double* y, std::int64_t n) {
    for (int64_t i = 0; i < n; ++i)
        y[i] = x[i] * 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
}

void gelu_backward(const double* x, const double* gy, double* gx, std::int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
        gx[i] += gy[i] * (cdf + x[i] * pdf);
    }
}

}  // namespace nervpp::kern::serial
