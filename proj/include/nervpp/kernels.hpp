#pragma once

#include <cstdint>

namespace nervpp::kern {

// Dense NCHW cross-correlation (no kernel flip), zero padding.
struct Conv2dShape {
    std::int64_t n = 1;
    std::int64_t cin = 1;
    std::int64_t hin = 1;
    std::int64_t win = 1;
    std::int64_t cout = 1;
    std::int64_t kh = 1;
    std::int64_t kw = 1;
    std::int64_t stride = 1;
    std::int64_t pad = 0;
    std::int64_t groups = 1;

    std::int64_t hout() const { return (hin + 2 * pad - kh) / stride + 1; }
    std::int64_t wout() const { return (win + 2 * pad - kw) / stride + 1; }
};

struct Resize2dShape {
    std::int64_t n = 1;
    std::int64_t c = 1;
    std::int64_t h = 1;
    std::int64_t w = 1;
    std::int64_t scale = 1;  // integer upscale factor >= 1
};

struct ShuffleShape {
    std::int64_t n = 1;
    std::int64_t c = 1;  // output channels
    std::int64_t r = 1;  // upscale factor; input has c*r*r channels
    std::int64_t h = 1;  // input spatial dims
    std::int64_t w = 1;
};

// The hot kernels exist twice: the functions below run the inner loops
// under OpenMP, and nervpp::kern::serial holds plain single-threaded
// reference versions with identical per-element accumulation order, so
// the two produce bit-identical results and the reference stays usable
// as a test oracle. Forward kernels overwrite their output; backward
// kernels accumulate (+=) into their gradient output.

void conv2d_forward(const double* x, const double* w, const double* bias,
                    double* y, const Conv2dShape& s);
void conv2d_backward_input(const double* gy, const double* w, double* gx,
                           const Conv2dShape& s);
void conv2d_backward_weight(const double* gy, const double* x, double* gw,
                            const Conv2dShape& s);
void conv2d_backward_bias(const double* gy, double* gb, const Conv2dShape& s);

void pixel_shuffle_forward(const double* x, double* y, const ShuffleShape& s);
void pixel_shuffle_backward(const double* gy, double* gx, const ShuffleShape& s);

// align_corners=false, border-clamped
void bilinear_forward(const double* x, double* y, const Resize2dShape& s);
void bilinear_backward(const double* gy, double* gx, const Resize2dShape& s);

// exact erf form: x * Phi(x)
void gelu_forward(const double* x, double* y, std::int64_t n);
void gelu_backward(const double* x, const double* gy, double* gx, std::int64_t n);

namespace serial {

void conv2d_forward(const double* x, const double* w, const double* bias,
                    double* y, const Conv2dShape& s);
void conv2d_backward_input(const double* gy, const double* w, double* gx,
                           const Conv2dShape& s);
void conv2d_backward_weight(const double* gy, const double* x, double* gw,
                            const Conv2dShape& s);
void conv2d_backward_bias(const double* gy, double* gb, const Conv2dShape& s);

void pixel_shuffle_forward(const double* x, double* y, const ShuffleShape& s);
void pixel_shuffle_backward(const double* gy, double* gx, const ShuffleShape& s);

void bilinear_forward(const double* x, double* y, const Resize2dShape& s);
void bilinear_backward(const double* gy, double* gx, const Resize2dShape& s);

void gelu_forward(const double* x, double* y, std::int64_t n);
void gelu_backward(const double* x, const double* gy, double* gx, std::int64_t n);

}  // namespace serial

}  // namespace nervpp::kern
