#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nervpp/rng.hpp"
#include "nervpp/tensor.hpp"

namespace nervpp {

// One decoder block: SCRB -> UB(stride) -> SCRB, with a bilinear skip
// around the whole block (1x1 conv for channel matching).
struct BlockSpec {
    int stride = 1;
    int out_channels = 1;
    int dw_kernel = 7;
    int expansion = 4;
};

struct ArchConfig {
    double pe_base = 1.25;
    int pe_levels = 40;
    int stem_hidden = 128;
    int h0 = 4;
    int w0 = 4;
    int c0 = 24;
    std::vector<BlockSpec> blocks;
    int head_kernel = 3;
    // Widens the post-upsample SCRB expansion to 2x in every block.
    bool variant_star = false;

    int frame_h() const;
    int frame_w() const;
    // Throws std::invalid_argument when any field is out of contract.
    void validate() const;
};

// Named size presets (xsmall/small/medium/large) for frames whose sides
// are divisible by 16; throws DataError otherwise.
ArchConfig preset_config(const std::string& name, int frame_h, int frame_w);

enum class ParamKind { kLinearWeight, kConvWeight, kBias };

struct ParamSpec {
    std::string name;
    std::vector<std::int64_t> shape;
    ParamKind kind;
    std::int64_t fan_in;  // receptive size used for init scaling
};

// Canonical parameter order: stem (fc1 w/b, fc2 w/b), each block in
// order (pre dw/pw1/pw2, ub conv, post dw/pw1/pw2, skip pw; weight then
// bias within each layer), head last. Serialization relies on it.
std::vector<ParamSpec> parameter_specs(const ArchConfig& cfg);

// Owns the parameter tensors of one model in canonical order.
class ParameterStore {
  public:
    explicit ParameterStore(const ArchConfig& cfg);

    std::size_t size() const { return tensors_.size(); }
    Tensor& at(std::size_t i) { return tensors_[i]; }
    const Tensor& at(std::size_t i) const { return tensors_[i]; }
    const ParamSpec& spec(std::size_t i) const { return specs_[i]; }
    Tensor& by_name(const std::string& name);

    std::int64_t total_scalars() const;
    void zero_all_grads();

  private:
    std::vector<ParamSpec> specs_;
    std::vector<Tensor> tensors_;
};

// Kaiming-uniform fan-in init (bound 1/sqrt(fan_in)) for weights, zero
// biases; the same seed always reproduces the same store.
ParameterStore init_params(const ArchConfig& cfg, std::uint64_t seed);

struct ScrbParams {
    Tensor dw_w, dw_b, pw1_w, pw1_b, pw2_w, pw2_b;
};

struct UbParams {
    Tensor w, b;
};

struct BlockParams {
    ScrbParams pre;
    UbParams ub;
    ScrbParams post;
    Tensor skip_w, skip_b;
};

struct StemParams {
    Tensor w1, b1, w2, b2;
};

struct HeadParams {
    Tensor w, b;
};

// Non-owning view grouping the store's tensors by layer.
struct ModelView {
    StemParams stem;
    std::vector<BlockParams> blocks;
    HeadParams head;
};

ModelView bind_params(const ArchConfig& cfg, ParameterStore& store);

// [sin(b^0 pi t), cos(b^0 pi t), ..., sin(b^{l-1} pi t), cos(b^{l-1} pi t)]
// as a constant (1, 2l) tensor.
Tensor positional_encode(double t, double base, int levels);

// linear -> GELU -> linear, reshaped to (1, c0, h0, w0).
Tensor stem_forward(const Tensor& pe, const StemParams& p, int c0, int h0, int w0);

// y = x + pw2(gelu(pw1(dw(x)))); dw is depthwise with its kernel's padding.
Tensor scrb_forward(const Tensor& x, const ScrbParams& p);

// 3x3 conv (pad 1) -> pixel_shuffle(stride) -> GELU.
Tensor ub_forward(const Tensor& x, const UbParams& p, int stride);

// y = SCRB_post(UB(SCRB_pre(x))) + skip_pw(bilinear_resize(x, stride))
Tensor nervpp_block_forward(const Tensor& x, const BlockParams& p, const BlockSpec& spec);

// y = (tanh(conv(x)) + 1) / 2, output channels fixed at 3.
Tensor head_forward(const Tensor& x, const HeadParams& p);

// Full pipeline PE -> stem -> blocks -> head for one time coordinate.
Tensor model_forward(double t, const ArchConfig& cfg, ParameterStore& store);

// Frame index -> time coordinate: i/(T-1), or 0 when T == 1.
double frame_time(std::int64_t index, std::int64_t total);

std::int64_t count_params(const ArchConfig& cfg);

// Multiply-accumulates per output pixel: sum over conv/linear layers of
// Kh*Kw*(Cin/g)*Cout*Hout*Wout, divided by frame H*W.
double count_macs_per_pixel(const ArchConfig& cfg);

}  // namespace nervpp
