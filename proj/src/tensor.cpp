#include "nervpp/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "nervpp/common.hpp"
#include "nervpp/kernels.hpp"

namespace nervpp {

using detail::TensorNode;

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
        n *= d;
    }
    return n;
}

double* TensorNode::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
}

namespace {

thread_local GradTape* t_active_tape = nullptr;

void ensure_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError(std::string("non-finite value in ") + what);
}

std::shared_ptr<TensorNode> make_node(std::vector<std::int64_t> shape, bool requires_grad) {
    auto node = std::make_shared<TensorNode>();
    node->data.resize(static_cast<std::size_t>(shape_numel(shape)));
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return node;
}

Tensor wrap(std::shared_ptr<TensorNode> node) {
    Tensor t;
    t.node() = std::move(node);
    return t;
}

// Finish an op: finiteness gate, then record the backward step if a tape
// is listening and anything upstream wants gradients.
void finish(const Tensor& out, const char* what,
            std::function<void(std::span<const double>)> pull) {
    ensure_finite(out.data(), what);
    if (out.requires_grad() && t_active_tape != nullptr)
        t_active_tape->record(out.node(), std::move(pull));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

// Elementwise y = f(x) with dy/dx = df(x).
Tensor pointwise(const Tensor& a, const char* what, double (*f)(double),
                 double (*df)(double)) {
    auto out = make_node(a.shape(), a.requires_grad());
    const auto x = a.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = f(x[i]);
    Tensor t = wrap(out);
    finish(t, what, [an = a.node(), df](std::span<const double> gy) {
        if (!an->requires_grad) return;
        double* gx = an->grad_buffer();
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(an->data[i]);
    });
    return t;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    return wrap(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
    if (!std::isfinite(value)) throw NumericError("non-finite fill value");
    auto node = make_node(std::move(shape), requires_grad);
    std::fill(node->data.begin(), node->data.end(), value);
    return wrap(std::move(node));
}

Tensor Tensor::from_vector(std::vector<std::int64_t> shape, std::vector<double> data,
                           bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw std::invalid_argument("from_vector: data length does not match shape");
    ensure_finite(data, "from_vector");
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_vector({1}, {value}, requires_grad);
}

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not a scalar");
    return node_->data[0];
}

GradTape::GradTape() {
    if (t_active_tape != nullptr)
        throw std::logic_error("a GradTape is already active on this thread");
    t_active_tape = this;
}

GradTape::~GradTape() {
    if (t_active_tape == this) t_active_tape = nullptr;
}

GradTape* GradTape::active() { return t_active_tape; }

void GradTape::record(std::shared_ptr<TensorNode> out,
                      std::function<void(std::span<const double>)> pull) {
    entries_.push_back({std::move(out), std::move(pull)});
}

void GradTape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar");
    if (entries_.empty()) throw std::logic_error("backward: tape is empty");
    loss.node()->grad.assign(1, 1.0);
    // Entries are in execution (topological) order; reverse replay sees
    // every consumer of a node before the node's own producer entry.
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
        if (!it->out->grad.empty()) it->pull(it->out->grad);
    entries_.clear();
}

namespace ops {

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto out = make_node(a.shape(), a.requires_grad() || b.requires_grad());
    const auto xa = a.data(), xb = b.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = xa[i] + xb[i];
    Tensor t = wrap(out);
    finish(t, "add", [an = a.node(), bn = b.node()](std::span<const double> gy) {
        if (an->requires_grad) {
            double* g = an->grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
        if (bn->requires_grad) {
            double* g = bn->grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
    });
    return t;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto out = make_node(a.shape(), a.requires_grad() || b.requires_grad());
    const auto xa = a.data(), xb = b.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = xa[i] - xb[i];
    Tensor t = wrap(out);
    finish(t, "sub", [an = a.node(), bn = b.node()](std::span<const double> gy) {
        if (an->requires_grad) {
            double* g = an->grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
        if (bn->requires_grad) {
            double* g = bn->grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
        }
    });
    return t;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto out = make_node(a.shape(), a.requires_grad() || b.requires_grad());
    const auto xa = a.data(), xb = b.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = xa[i] * xb[i];
    Tensor t = wrap(out);
    finish(t, "mul", [an = a.node(), bn = b.node()](std::span<const double> gy) {
        if (an->requires_grad) {
            double* g = an->grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            double* g = bn->grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * an->data[i];
        }
    });
    return t;
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    auto out = make_node(a.shape(), a.requires_grad() || b.requires_grad());
    const auto xa = a.data(), xb = b.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = xa[i] / xb[i];
    Tensor t = wrap(out);
    finish(t, "div", [an = a.node(), bn = b.node()](std::span<const double> gy) {
        if (an->requires_grad) {
            double* g = an->grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] / bn->data[i];
        }
        if (bn->requires_grad) {
            double* g = bn->grad_buffer();
            for (std::size_t i = 0; i < gy.size(); ++i)
                g[i] -= gy[i] * an->data[i] / (bn->data[i] * bn->data[i]);
        }
    });
    return t;
}

Tensor add_scalar(const Tensor& a, double c) {
    auto out = make_node(a.shape(), a.requires_grad());
    const auto x = a.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = x[i] + c;
    Tensor t = wrap(out);
    finish(t, "add_scalar", [an = a.node()](std::span<const double> gy) {
        if (!an->requires_grad) return;
        double* g = an->grad_buffer();
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    });
    return t;
}

Tensor mul_scalar(const Tensor& a, double c) {
    auto out = make_node(a.shape(), a.requires_grad());
    const auto x = a.data();
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = x[i] * c;
    Tensor t = wrap(out);
    finish(t, "mul_scalar", [an = a.node(), c](std::span<const double> gy) {
        if (!an->requires_grad) return;
        double* g = an->grad_buffer();
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * c;
    });
    return t;
}

Tensor tanh(const Tensor& a) {
    return pointwise(a, "tanh", [](double x) { return std::tanh(x); },
                     [](double x) {
                         const double t = std::tanh(x);
                         return 1.0 - t * t;
                     });
}

Tensor sin(const Tensor& a) {
    return pointwise(a, "sin", [](double x) { return std::sin(x); },
                     [](double x) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
    return pointwise(a, "cos", [](double x) { return std::cos(x); },
                     [](double x) { return -std::sin(x); });
}

Tensor abs(const Tensor& a) {
    // subgradient 0 at the kink
    return pointwise(a, "abs", [](double x) { return std::abs(x); },
                     [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor gelu(const Tensor& a) {
    auto out = make_node(a.shape(), a.requires_grad());
    kern::gelu_forward(a.data().data(), out->data.data(), out->numel());
    Tensor t = wrap(out);
    finish(t, "gelu", [an = a.node()](std::span<const double> gy) {
        if (!an->requires_grad) return;
        kern::gelu_backward(an->data.data(), gy.data(), an->grad_buffer(),
                            static_cast<std::int64_t>(gy.size()));
    });
    return t;
}

Tensor sum(const Tensor& a) {
    auto out = make_node({1}, a.requires_grad());
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    out->data[0] = acc;
    Tensor t = wrap(out);
    finish(t, "sum", [an = a.node()](std::span<const double> gy) {
        if (!an->requires_grad) return;
        double* g = an->grad_buffer();
        for (std::size_t i = 0; i < an->data.size(); ++i) g[i] += gy[0];
    });
    return t;
}

Tensor mean(const Tensor& a) {
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    auto out = make_node({1}, a.requires_grad());
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    // true division: mean of n equal values is exact (n·(1/n) is not)
    out->data[0] = acc / static_cast<double>(a.numel());
    Tensor t = wrap(out);
    finish(t, "mean", [an = a.node(), inv_n](std::span<const double> gy) {
        if (!an->requires_grad) return;
        double* g = an->grad_buffer();
        for (std::size_t i = 0; i < an->data.size(); ++i) g[i] += gy[0] * inv_n;
    });
    return t;
}

Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    auto out = std::make_shared<TensorNode>();
    out->shape = std::move(shape);
    out->data = std::vector<double>(a.data().begin(), a.data().end());
    out->requires_grad = a.requires_grad();
    Tensor t = wrap(out);
    finish(t, "reshape", [an = a.node()](std::span<const double> gy) {
        if (!an->requires_grad) return;
        double* g = an->grad_buffer();
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    });
    return t;
}

namespace {

Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* b) {
    if (x.shape().size() != 2 || w.shape().size() != 2)
        throw std::invalid_argument("linear: x and w must be rank 2");
    const std::int64_t n = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[0];
    if (w.shape()[1] != in) throw std::invalid_argument("linear: in-features mismatch");
    if (b != nullptr && (b->shape().size() != 1 || b->shape()[0] != out_dim))
        throw std::invalid_argument("linear: bias shape mismatch");

    bool rq = x.requires_grad() || w.requires_grad() || (b && b->requires_grad());
    auto node = make_node({n, out_dim}, rq);
    const auto xd = x.data(), wd = w.data();
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t o = 0; o < out_dim; ++o) {
            double acc = b ? b->data()[o] : 0.0;
            for (std::int64_t k = 0; k < in; ++k) acc += xd[i * in + k] * wd[o * in + k];
            node->data[i * out_dim + o] = acc;
        }
    Tensor t = wrap(node);
    auto bn = b ? b->node() : nullptr;
    finish(t, "linear",
           [xn = x.node(), wn = w.node(), bn, n, in, out_dim](std::span<const double> gy) {
               if (xn->requires_grad) {
                   double* gx = xn->grad_buffer();
                   for (std::int64_t i = 0; i < n; ++i)
                       for (std::int64_t k = 0; k < in; ++k) {
                           double acc = 0.0;
                           for (std::int64_t o = 0; o < out_dim; ++o)
                               acc += gy[i * out_dim + o] * wn->data[o * in + k];
                           gx[i * in + k] += acc;
                       }
               }
               if (wn->requires_grad) {
                   double* gw = wn->grad_buffer();
                   for (std::int64_t o = 0; o < out_dim; ++o)
                       for (std::int64_t k = 0; k < in; ++k) {
                           double acc = 0.0;
                           for (std::int64_t i = 0; i < n; ++i)
                               acc += gy[i * out_dim + o] * xn->data[i * in + k];
                           gw[o * in + k] += acc;
                       }
               }
               if (bn && bn->requires_grad) {
                   double* gb = bn->grad_buffer();
                   for (std::int64_t o = 0; o < out_dim; ++o) {
                       double acc = 0.0;
                       for (std::int64_t i = 0; i < n; ++i) acc += gy[i * out_dim + o];
                       gb[o] += acc;
                   }
               }
           });
    return t;
}

}  // namespace

Tensor linear(const Tensor& x, const Tensor& w) { return linear_impl(x, w, nullptr); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return linear_impl(x, w, &b);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
              int stride, int padding, int groups) {
    if (x.shape().size() != 4 || w.shape().size() != 4)
        throw std::invalid_argument("conv2d: x and w must be rank 4");
    if (stride < 1 || padding < 0 || groups < 1)
        throw std::invalid_argument("conv2d: bad stride/padding/groups");

    kern::Conv2dShape s;
    s.n = x.shape()[0];
    s.cin = x.shape()[1];
    s.hin = x.shape()[2];
    s.win = x.shape()[3];
    s.cout = w.shape()[0];
    s.kh = w.shape()[2];
    s.kw = w.shape()[3];
    s.stride = stride;
    s.pad = padding;
    s.groups = groups;

    if (s.cin % s.groups != 0 || s.cout % s.groups != 0)
        throw std::invalid_argument("conv2d: groups must divide both channel counts");
    if (w.shape()[1] != s.cin / s.groups)
        throw std::invalid_argument("conv2d: weight channel dim mismatch");
    if (s.kh % 2 == 0 || s.kw % 2 == 0)
        throw std::invalid_argument("conv2d: kernel dims must be odd");
    if (bias && (bias->shape().size() != 1 || bias->shape()[0] != s.cout))
        throw std::invalid_argument("conv2d: bias shape mismatch");
    if (s.hout() < 1 || s.wout() < 1)
        throw std::invalid_argument("conv2d: empty output");

    bool rq = x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad());
    auto node = make_node({s.n, s.cout, s.hout(), s.wout()}, rq);
    kern::conv2d_forward(x.data().data(), w.data().data(),
                         bias ? bias->data().data() : nullptr, node->data.data(), s);
    Tensor t = wrap(node);
    auto bn = bias ? bias->node() : nullptr;
    finish(t, "conv2d", [xn = x.node(), wn = w.node(), bn, s](std::span<const double> gy) {
        if (xn->requires_grad)
            kern::conv2d_backward_input(gy.data(), wn->data.data(), xn->grad_buffer(), s);
        if (wn->requires_grad)
            kern::conv2d_backward_weight(gy.data(), xn->data.data(), wn->grad_buffer(), s);
        if (bn && bn->requires_grad)
            kern::conv2d_backward_bias(gy.data(), bn->grad_buffer(), s);
    });
    return t;
}

Tensor pixel_shuffle(const Tensor& x, int r) {
    if (x.shape().size() != 4) throw std::invalid_argument("pixel_shuffle: x must be rank 4");
    if (r < 1) throw std::invalid_argument("pixel_shuffle: r must be >= 1");
    if (x.shape()[1] % (static_cast<std::int64_t>(r) * r) != 0)
        throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");

    kern::ShuffleShape s;
    s.n = x.shape()[0];
    s.r = r;
    s.c = x.shape()[1] / (static_cast<std::int64_t>(r) * r);
    s.h = x.shape()[2];
    s.w = x.shape()[3];

    auto node = make_node({s.n, s.c, s.h * r, s.w * r}, x.requires_grad());
    kern::pixel_shuffle_forward(x.data().data(), node->data.data(), s);
    Tensor t = wrap(node);
    finish(t, "pixel_shuffle", [xn = x.node(), s](std::span<const double> gy) {
        if (!xn->requires_grad) return;
        kern::pixel_shuffle_backward(gy.data(), xn->grad_buffer(), s);
    });
    return t;
}

Tensor bilinear_resize(const Tensor& x, int scale) {
    if (x.shape().size() != 4)
        throw std::invalid_argument("bilinear_resize: x must be rank 4");
    if (scale < 1) throw std::invalid_argument("bilinear_resize: scale must be >= 1");

    kern::Resize2dShape s;
    s.n = x.shape()[0];
    s.c = x.shape()[1];
    s.h = x.shape()[2];
    s.w = x.shape()[3];
    s.scale = scale;

    auto node = make_node({s.n, s.c, s.h * scale, s.w * scale}, x.requires_grad());
    kern::bilinear_forward(x.data().data(), node->data.data(), s);
    Tensor t = wrap(node);
    finish(t, "bilinear_resize", [xn = x.node(), s](std::span<const double> gy) {
        if (!xn->requires_grad) return;
        kern::bilinear_backward(gy.data(), xn->grad_buffer(), s);
    });
    return t;
}

}  // namespace ops

}  // namespace nervpp
