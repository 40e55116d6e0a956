#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nervpp {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

namespace detail {

struct TensorNode {
    std::vector<std::int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    // Returns a zero-initialized gradient buffer, allocating on first use.
    double* grad_buffer();
};

}  // namespace detail

// Dense row-major n-d array of doubles, value-semantic handle over a
// shared node so autodiff can hold references to intermediate results.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::int64_t> shape, double value,
                       bool requires_grad = false);
    // Rejects non-finite values and length mismatches.
    static Tensor from_vector(std::vector<std::int64_t> shape, std::vector<double> data,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::int64_t>& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> data() const { return node_->data; }
    // Direct mutation; only meaningful outside a recorded forward pass
    // (optimizer updates, parameter loading).
    std::span<double> mutable_data() { return node_->data; }

    // Empty span when no gradient has been accumulated yet.
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad();

    double item() const;  // single-element tensors only

    std::shared_ptr<detail::TensorNode>& node() { return node_; }
    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;
};

// Records the differentiable ops executed while it is alive (one active
// tape per thread). backward() replays them once in reverse, summing
// gradients over fan-out, then leaves the tape empty.
class GradTape {
  public:
    GradTape();
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    // loss must be a single-element tensor and the tape non-empty.
    void backward(const Tensor& loss);

    std::size_t size() const { return entries_.size(); }

    static GradTape* active();

    // Internal: used by the op layer to append a backward step.
    void record(std::shared_ptr<detail::TensorNode> out,
                std::function<void(std::span<const double>)> pull);

  private:
    struct Entry {
        std::shared_ptr<detail::TensorNode> out;
        std::function<void(std::span<const double>)> pull;
    };
    std::vector<Entry> entries_;
};

namespace ops {

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor tanh(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);   // -> shape {1}
Tensor mean(const Tensor& a);  // -> shape {1}

Tensor reshape(const Tensor& a, std::vector<std::int64_t> shape);

// x: [N, In], w: [Out, In], optional bias [Out] -> [N, Out]; y = x w^T + b
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x: [N, Cin, H, W], w: [Cout, Cin/groups, Kh, Kw], optional bias [Cout].
// Cross-correlation (no kernel flip), zero padding, odd kernels.
Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias,
              int stride, int padding, int groups);

// x: [N, C*r^2, H, W] -> [N, C, H*r, W*r]
Tensor pixel_shuffle(const Tensor& x, int r);

// x: [N, C, H, W] -> [N, C, H*s, W*s], align_corners=false, border clamp
Tensor bilinear_resize(const Tensor& x, int scale);

}  // namespace ops

}  // namespace nervpp
