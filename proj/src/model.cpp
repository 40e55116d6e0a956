#include "nervpp/model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "nervpp/common.hpp"

namespace nervpp {

namespace {

// One weight-carrying layer with its output geometry; linear layers are
// folded in as 1x1 "convs" over a single output position.
struct Layer {
    std::string name;
    bool linear;
    std::int64_t cout, cin_g, kh, kw, hout, wout;
};

template <typename Fn>
void walk_layers(const ArchConfig& cfg, Fn&& fn) {
    cfg.validate();
    fn(Layer{"stem.fc1", true, cfg.stem_hidden, 2LL * cfg.pe_levels, 1, 1, 1, 1});
    fn(Layer{"stem.fc2", true, static_cast<std::int64_t>(cfg.c0) * cfg.h0 * cfg.w0,
             cfg.stem_hidden, 1, 1, 1, 1});
    std::int64_t c = cfg.c0, h = cfg.h0, w = cfg.w0;
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        const auto& b = cfg.blocks[i];
        const std::string p = "block" + std::to_string(i);
        const std::int64_t e = b.expansion;
        const std::int64_t ep = cfg.variant_star ? 2 * e : e;
        const std::int64_t k = b.dw_kernel, s = b.stride, co = b.out_channels;
        fn(Layer{p + ".pre.dw", false, c, 1, k, k, h, w});
        fn(Layer{p + ".pre.pw1", false, e * c, c, 1, 1, h, w});
        fn(Layer{p + ".pre.pw2", false, c, e * c, 1, 1, h, w});
        fn(Layer{p + ".ub.conv", false, co * s * s, c, 3, 3, h, w});
        h *= s;
        w *= s;
        fn(Layer{p + ".post.dw", false, co, 1, k, k, h, w});
        fn(Layer{p + ".post.pw1", false, ep * co, co, 1, 1, h, w});
        fn(Layer{p + ".post.pw2", false, co, ep * co, 1, 1, h, w});
        fn(Layer{p + ".skip", false, co, c, 1, 1, h, w});
        c = co;
    }
    fn(Layer{"head", false, 3, c, cfg.head_kernel, cfg.head_kernel, h, w});
}

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

int ArchConfig::frame_h() const {
    int h = h0;
    for (const auto& b : blocks) h *= b.stride;
    return h;
}

int ArchConfig::frame_w() const {
    int w = w0;
    for (const auto& b : blocks) w *= b.stride;
    return w;
}

void ArchConfig::validate() const {
    require(pe_base > 1.0, "pe_base must be > 1");
    require(pe_levels >= 1, "pe_levels must be >= 1");
    require(stem_hidden >= 1, "stem_hidden must be >= 1");
    require(h0 >= 1 && w0 >= 1, "base grid dims must be >= 1");
    require(c0 >= 1, "base channels must be >= 1");
    require(head_kernel >= 1 && head_kernel % 2 == 1, "head_kernel must be odd and >= 1");
    for (const auto& b : blocks) {
        require(b.stride >= 1, "block stride must be >= 1");
        require(b.out_channels >= 1, "block out_channels must be >= 1");
        require(b.dw_kernel >= 1 && b.dw_kernel % 2 == 1, "dw_kernel must be odd and >= 1");
        require(b.expansion >= 1, "block expansion must be >= 1");
    }
}

ArchConfig preset_config(const std::string& name, int frame_h, int frame_w) {
    if (frame_h < 16 || frame_w < 16 || frame_h % 16 != 0 || frame_w % 16 != 0)
        throw DataError("preset configs require frame dims divisible by 16, got " +
                        std::to_string(frame_h) + "x" + std::to_string(frame_w));
    int c0 = 0;
    int ch[4] = {0, 0, 0, 0};
    if (name == "xsmall") {
        c0 = 24;
        ch[0] = 16, ch[1] = 12, ch[2] = 8, ch[3] = 6;
    } else if (name == "small") {
        c0 = 48;
        ch[0] = 32, ch[1] = 24, ch[2] = 16, ch[3] = 8;
    } else if (name == "medium") {
        c0 = 72;
        ch[0] = 48, ch[1] = 32, ch[2] = 24, ch[3] = 12;
    } else if (name == "large") {
        c0 = 96;
        ch[0] = 64, ch[1] = 48, ch[2] = 32, ch[3] = 16;
    } else {
        throw DataError("unknown size preset: " + name);
    }
    ArchConfig cfg;
    cfg.h0 = frame_h / 16;
    cfg.w0 = frame_w / 16;
    cfg.c0 = c0;
    for (int i = 0; i < 4; ++i) cfg.blocks.push_back(BlockSpec{2, ch[i], 7, 4});
    cfg.validate();
    return cfg;
}

std::vector<ParamSpec> parameter_specs(const ArchConfig& cfg) {
    std::vector<ParamSpec> out;
    walk_layers(cfg, [&](const Layer& L) {
        const std::int64_t fan_in = L.cin_g * L.kh * L.kw;
        if (L.linear) {
            out.push_back({L.name + ".weight", {L.cout, L.cin_g}, ParamKind::kLinearWeight,
                           fan_in});
        } else {
            out.push_back({L.name + ".weight", {L.cout, L.cin_g, L.kh, L.kw},
                           ParamKind::kConvWeight, fan_in});
        }
        out.push_back({L.name + ".bias", {L.cout}, ParamKind::kBias, fan_in});
    });
    return out;
}

ParameterStore::ParameterStore(const ArchConfig& cfg) : specs_(parameter_specs(cfg)) {
    tensors_.reserve(specs_.size());
    for (const auto& s : specs_) tensors_.push_back(Tensor::zeros(s.shape, true));
}

Tensor& ParameterStore::by_name(const std::string& name) {
    for (std::size_t i = 0; i < specs_.size(); ++i)
        if (specs_[i].name == name) return tensors_[i];
    throw std::invalid_argument("no parameter named " + name);
}

std::int64_t ParameterStore::total_scalars() const {
    std::int64_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
}

void ParameterStore::zero_all_grads() {
    for (auto& t : tensors_) t.zero_grad();
}

ParameterStore init_params(const ArchConfig& cfg, std::uint64_t seed) {
    ParameterStore store(cfg);
    Rng rng(seed);
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& spec = store.spec(i);
        if (spec.kind == ParamKind::kBias) continue;
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (double& v : store.at(i).mutable_data()) v = rng.uniform(-bound, bound);
    }
    return store;
}

ModelView bind_params(const ArchConfig& cfg, ParameterStore& store) {
    const auto specs = parameter_specs(cfg);
    if (specs.size() != store.size())
        throw std::invalid_argument("parameter store does not match config");
    for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].shape != store.at(i).shape())
            throw std::invalid_argument("parameter shape mismatch at " + specs[i].name);

    std::size_t next = 0;
    auto take = [&]() -> Tensor& { return store.at(next++); };
    auto take_scrb = [&]() {
        ScrbParams p;
        p.dw_w = take(), p.dw_b = take();
        p.pw1_w = take(), p.pw1_b = take();
        p.pw2_w = take(), p.pw2_b = take();
        return p;
    };

    ModelView v;
    v.stem.w1 = take(), v.stem.b1 = take();
    v.stem.w2 = take(), v.stem.b2 = take();
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        BlockParams b;
        b.pre = take_scrb();
        b.ub.w = take(), b.ub.b = take();
        b.post = take_scrb();
        b.skip_w = take(), b.skip_b = take();
        v.blocks.push_back(std::move(b));
    }
    v.head.w = take(), v.head.b = take();
    return v;
}

Tensor positional_encode(double t, double base, int levels) {
    require(levels >= 1, "pe_levels must be >= 1");
    require(base > 1.0, "pe_base must be > 1");
    require(t >= 0.0 && t <= 1.0, "time coordinate must lie in [0,1]");
    std::vector<double> v(2 * static_cast<std::size_t>(levels));
    for (int j = 0; j < levels; ++j) {
        const double arg = std::pow(base, j) * std::numbers::pi * t;
        v[2 * j] = std::sin(arg);
        v[2 * j + 1] = std::cos(arg);
    }
    return Tensor::from_vector({1, 2LL * levels}, std::move(v));
}

Tensor stem_forward(const Tensor& pe, const StemParams& p, int c0, int h0, int w0) {
    Tensor x = ops::linear(pe, p.w1, p.b1);
    x = ops::gelu(x);
    x = ops::linear(x, p.w2, p.b2);
    return ops::reshape(x, {1, c0, h0, w0});
}

Tensor scrb_forward(const Tensor& x, const ScrbParams& p) {
    const int c = static_cast<int>(x.shape()[1]);
    const int k = static_cast<int>(p.dw_w.shape()[2]);
    Tensor h = ops::conv2d(x, p.dw_w, p.dw_b, 1, (k - 1) / 2, c);
    h = ops::conv2d(h, p.pw1_w, p.pw1_b, 1, 0, 1);
    h = ops::gelu(h);
    h = ops::conv2d(h, p.pw2_w, p.pw2_b, 1, 0, 1);
    return ops::add(x, h);
}

Tensor ub_forward(const Tensor& x, const UbParams& p, int stride) {
    Tensor h = ops::conv2d(x, p.w, p.b, 1, 1, 1);
    h = ops::pixel_shuffle(h, stride);
    return ops::gelu(h);
}

Tensor nervpp_block_forward(const Tensor& x, const BlockParams& p, const BlockSpec& spec) {
    Tensor m = scrb_forward(x, p.pre);
    m = ub_forward(m, p.ub, spec.stride);
    m = scrb_forward(m, p.post);
    Tensor sk = ops::bilinear_resize(x, spec.stride);
    sk = ops::conv2d(sk, p.skip_w, p.skip_b, 1, 0, 1);
    return ops::add(m, sk);
}

Tensor head_forward(const Tensor& x, const HeadParams& p) {
    const int k = static_cast<int>(p.w.shape()[2]);
    Tensor h = ops::conv2d(x, p.w, p.b, 1, (k - 1) / 2, 1);
    h = ops::tanh(h);
    return ops::mul_scalar(ops::add_scalar(h, 1.0), 0.5);
}

Tensor model_forward(double t, const ArchConfig& cfg, ParameterStore& store) {
    ModelView v = bind_params(cfg, store);
    Tensor x = positional_encode(t, cfg.pe_base, cfg.pe_levels);
    x = stem_forward(x, v.stem, cfg.c0, cfg.h0, cfg.w0);
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i)
        x = nervpp_block_forward(x, v.blocks[i], cfg.blocks[i]);
    return head_forward(x, v.head);
}

double frame_time(std::int64_t index, std::int64_t total) {
    require(total >= 1, "frame count must be >= 1");
    require(index >= 0 && index < total, "frame index out of range");
    if (total == 1) return 0.0;
    return static_cast<double>(index) / static_cast<double>(total - 1);
}

std::int64_t count_params(const ArchConfig& cfg) {
    std::int64_t n = 0;
    for (const auto& s : parameter_specs(cfg)) n += shape_numel(s.shape);
    return n;
}

double count_macs_per_pixel(const ArchConfig& cfg) {
    double macs = 0.0;
    walk_layers(cfg, [&](const Layer& L) {
        macs += static_cast<double>(L.kh * L.kw * L.cin_g * L.cout) *
                static_cast<double>(L.hout * L.wout);
    });
    return macs / (static_cast<double>(cfg.frame_h()) * cfg.frame_w());
}

}  // namespace nervpp
