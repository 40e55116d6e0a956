#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <set>

#include "helpers/gradcheck.hpp"
#include "nervpp/common.hpp"
#include "nervpp/model.hpp"

using namespace nervpp;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0;
}

// Two stride-2 blocks over a 4x4 grid: a 16x16 frame, small enough for
// exhaustive finite differences.
ArchConfig toy_config() {
    ArchConfig cfg;
    cfg.pe_base = 1.3;
    cfg.pe_levels = 4;
    cfg.stem_hidden = 6;
    cfg.h0 = 4, cfg.w0 = 4, cfg.c0 = 4;
    cfg.blocks = {BlockSpec{2, 3, 3, 2}, BlockSpec{2, 2, 3, 2}};
    cfg.head_kernel = 3;
    return cfg;
}

ScrbParams random_scrb(int c, int k, int e, Rng& rng) {
    ScrbParams p;
    p.dw_w = test::random_tensor({c, 1, k, k}, rng);
    p.dw_b = test::random_tensor({c}, rng);
    p.pw1_w = test::random_tensor({static_cast<std::int64_t>(e) * c, c, 1, 1}, rng);
    p.pw1_b = test::random_tensor({static_cast<std::int64_t>(e) * c}, rng);
    p.pw2_w = test::random_tensor({c, static_cast<std::int64_t>(e) * c, 1, 1}, rng);
    p.pw2_b = test::random_tensor({c}, rng);
    return p;
}

}  // namespace

TEST_CASE("positional encoding matches the scalar formula") {
    Tensor pe0 = positional_encode(0.0, 1.25, 2);
    REQUIRE(pe0.shape() == std::vector<std::int64_t>{1, 4});
    CHECK(pe0.data()[0] == 0.0);
    CHECK(pe0.data()[1] == 1.0);
    CHECK(pe0.data()[2] == 0.0);
    CHECK(pe0.data()[3] == 1.0);

    Tensor pe1 = positional_encode(1.0, 2.0, 1);
    CHECK(std::abs(pe1.data()[0]) < 1e-15);  // sin(pi)
    CHECK(pe1.data()[1] == doctest::Approx(-1.0).epsilon(1e-15));

    const double t = 0.5, b = 1.25;
    Tensor pe = positional_encode(t, b, 3);
    REQUIRE(pe.numel() == 6);
    for (int j = 0; j < 3; ++j) {
        const double arg = std::pow(b, j) * std::numbers::pi * t;
        CHECK(pe.data()[2 * j] == doctest::Approx(std::sin(arg)).epsilon(1e-14));
        CHECK(pe.data()[2 * j + 1] == doctest::Approx(std::cos(arg)).epsilon(1e-14));
    }

    CHECK_THROWS_AS(positional_encode(1.5, 1.25, 2), std::invalid_argument);
    CHECK_THROWS_AS(positional_encode(0.5, 1.0, 2), std::invalid_argument);
}

TEST_CASE("stem forward: zero params, shape contract, hand matmul") {
    StemParams z;
    z.w1 = Tensor::zeros({6, 8});
    z.b1 = Tensor::zeros({6});
    z.w2 = Tensor::zeros({4 * 2 * 2, 6});
    z.b2 = Tensor::zeros({4 * 2 * 2});
    Tensor pe = positional_encode(0.25, 1.25, 4);
    Tensor y = stem_forward(pe, z, 4, 2, 2);
    REQUIRE(y.shape() == std::vector<std::int64_t>{1, 4, 2, 2});
    for (double v : y.data()) CHECK(v == 0.0);

    // 1-unit stem against a hand matrix multiply.
    StemParams p;
    p.w1 = Tensor::from_vector({1, 2}, {0.5, -0.7});
    p.b1 = Tensor::from_vector({1}, {0.2});
    p.w2 = Tensor::from_vector({1, 1}, {1.5});
    p.b2 = Tensor::from_vector({1}, {-0.1});
    const double t = 0.3;
    Tensor pe1 = positional_encode(t, 2.0, 1);
    const double s = std::sin(std::numbers::pi * t), c = std::cos(std::numbers::pi * t);
    const double pre = 0.5 * s - 0.7 * c + 0.2;
    const double g = pre * 0.5 * (1.0 + std::erf(pre / std::sqrt(2.0)));
    const double want = 1.5 * g - 0.1;
    Tensor out = stem_forward(pe1, p, 1, 1, 1);
    CHECK(out.item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("scrb with zeroed parameters is the identity") {
    Rng rng(1);
    Tensor x = test::random_tensor({1, 4, 5, 5}, rng, -1.0, 1.0, false);
    ScrbParams z;
    z.dw_w = Tensor::zeros({4, 1, 3, 3});
    z.dw_b = Tensor::zeros({4});
    z.pw1_w = Tensor::zeros({8, 4, 1, 1});
    z.pw1_b = Tensor::zeros({8});
    z.pw2_w = Tensor::zeros({4, 8, 1, 1});
    z.pw2_b = Tensor::zeros({4});
    Tensor y = scrb_forward(x, z);
    CHECK(bit_equal(x, y));

    Tensor x0 = Tensor::zeros({1, 4, 5, 5});
    Tensor y0 = scrb_forward(x0, z);
    for (double v : y0.data()) CHECK(v == 0.0);
}

TEST_CASE("scrb matches a step-by-step op composition") {
    Rng rng(2);
    Tensor x = test::random_tensor({1, 4, 4, 4}, rng, -1.0, 1.0, false);
    ScrbParams p = random_scrb(4, 3, 2, rng);
    Tensor y = scrb_forward(x, p);

    Tensor h = ops::conv2d(x, p.dw_w, p.dw_b, 1, 1, 4);
    h = ops::conv2d(h, p.pw1_w, p.pw1_b, 1, 0, 1);
    h = ops::gelu(h);
    h = ops::conv2d(h, p.pw2_w, p.pw2_b, 1, 0, 1);
    Tensor ref = ops::add(x, h);
    CHECK(bit_equal(y, ref));
}

TEST_CASE("ub forward composes conv, pixel shuffle, gelu") {
    Rng rng(3);
    Tensor x = test::random_tensor({1, 1, 2, 2}, rng, -1.0, 1.0, false);
    UbParams p;
    p.w = test::random_tensor({4, 1, 3, 3}, rng);  // cout * s^2 with cout=1, s=2
    p.b = test::random_tensor({4}, rng);
    Tensor y = ub_forward(x, p, 2);
    REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1, 4, 4});

    Tensor ref = ops::gelu(ops::pixel_shuffle(ops::conv2d(x, p.w, p.b, 1, 1, 1), 2));
    CHECK(bit_equal(y, ref));

    // stride 1 degenerates to conv + gelu
    UbParams q;
    q.w = test::random_tensor({3, 1, 3, 3}, rng);
    q.b = test::random_tensor({3}, rng);
    Tensor y1 = ub_forward(x, q, 1);
    Tensor ref1 = ops::gelu(ops::conv2d(x, q.w, q.b, 1, 1, 1));
    CHECK(bit_equal(y1, ref1));
}

TEST_CASE("block forward: zero params vanish, composed oracle, shape contract") {
    BlockSpec spec{2, 3, 3, 2};
    Rng rng(4);
    Tensor x = test::random_tensor({1, 4, 3, 3}, rng, -1.0, 1.0, false);

    BlockParams z;
    z.pre.dw_w = Tensor::zeros({4, 1, 3, 3});
    z.pre.dw_b = Tensor::zeros({4});
    z.pre.pw1_w = Tensor::zeros({8, 4, 1, 1});
    z.pre.pw1_b = Tensor::zeros({8});
    z.pre.pw2_w = Tensor::zeros({4, 8, 1, 1});
    z.pre.pw2_b = Tensor::zeros({4});
    z.ub.w = Tensor::zeros({12, 4, 3, 3});
    z.ub.b = Tensor::zeros({12});
    z.post.dw_w = Tensor::zeros({3, 1, 3, 3});
    z.post.dw_b = Tensor::zeros({3});
    z.post.pw1_w = Tensor::zeros({6, 3, 1, 1});
    z.post.pw1_b = Tensor::zeros({6});
    z.post.pw2_w = Tensor::zeros({3, 6, 1, 1});
    z.post.pw2_b = Tensor::zeros({3});
    z.skip_w = Tensor::zeros({3, 4, 1, 1});
    z.skip_b = Tensor::zeros({3});
    Tensor y0 = nervpp_block_forward(x, z, spec);
    REQUIRE(y0.shape() == std::vector<std::int64_t>{1, 3, 6, 6});
    for (double v : y0.data()) CHECK(v == 0.0);

    BlockParams p;
    p.pre = random_scrb(4, 3, 2, rng);
    p.ub.w = test::random_tensor({12, 4, 3, 3}, rng);
    p.ub.b = test::random_tensor({12}, rng);
    p.post = random_scrb(3, 3, 2, rng);
    p.skip_w = test::random_tensor({3, 4, 1, 1}, rng);
    p.skip_b = test::random_tensor({3}, rng);
    Tensor y = nervpp_block_forward(x, p, spec);

    Tensor main = scrb_forward(x, p.pre);
    main = ub_forward(main, p.ub, spec.stride);
    main = scrb_forward(main, p.post);
    Tensor skip = ops::conv2d(ops::bilinear_resize(x, 2), p.skip_w, p.skip_b, 1, 0, 1);
    CHECK(bit_equal(y, ops::add(main, skip)));
}

TEST_CASE("head forward: zero params give a flat 0.5 frame, range stays in [0,1]") {
    HeadParams z;
    z.w = Tensor::zeros({3, 4, 3, 3});
    z.b = Tensor::zeros({3});
    Tensor x = Tensor::full({1, 4, 5, 5}, 2.7);
    Tensor y = head_forward(x, z);
    REQUIRE(y.shape() == std::vector<std::int64_t>{1, 3, 5, 5});
    for (double v : y.data()) CHECK(v == 0.5);

    Rng rng(5);
    HeadParams p;
    p.w = test::random_tensor({3, 4, 3, 3}, rng, -3.0, 3.0);
    p.b = test::random_tensor({3}, rng, -3.0, 3.0);
    Tensor xr = test::random_tensor({1, 4, 5, 5}, rng, -4.0, 4.0, false);
    Tensor yr = head_forward(xr, p);
    for (double v : yr.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    Tensor ref = ops::mul_scalar(
        ops::add_scalar(ops::tanh(ops::conv2d(xr, p.w, p.b, 1, 1, 1)), 1.0), 0.5);
    CHECK(bit_equal(yr, ref));
}

TEST_CASE("model forward: shape, determinism, distinct frames for distinct t") {
    ArchConfig cfg = toy_config();
    ParameterStore store = init_params(cfg, 42);
    Tensor a = model_forward(0.25, cfg, store);
    REQUIRE(a.shape() == std::vector<std::int64_t>{1, 3, 16, 16});
    for (double v : a.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    Tensor b = model_forward(0.25, cfg, store);
    CHECK(bit_equal(a, b));

    Tensor c = model_forward(0.75, cfg, store);
    double dist = 0.0;
    for (std::size_t i = 0; i < c.data().size(); ++i)
        dist = std::max(dist, std::abs(a.data()[i] - c.data()[i]));
    CHECK(dist > 1e-9);
}

TEST_CASE("frame_time maps indices to [0,1]") {
    CHECK(frame_time(0, 1) == 0.0);
    CHECK(frame_time(0, 8) == 0.0);
    CHECK(frame_time(7, 8) == 1.0);
    CHECK(frame_time(3, 7) == 0.5);
    CHECK_THROWS_AS(frame_time(8, 8), std::invalid_argument);
    CHECK_THROWS_AS(frame_time(-1, 8), std::invalid_argument);
}

TEST_CASE("init_params: reproducible, seed-sensitive, fan-in scaled variance") {
    ArchConfig cfg = preset_config("small", 64, 64);
    ParameterStore a = init_params(cfg, 9);
    ParameterStore b = init_params(cfg, 9);
    ParameterStore c = init_params(cfg, 10);
    REQUIRE(a.size() == b.size());
    bool all_eq = true, any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        all_eq = all_eq && bit_equal(a.at(i), b.at(i));
        if (!bit_equal(a.at(i), c.at(i))) any_diff = true;
    }
    CHECK(all_eq);
    CHECK(any_diff);

    // biases start at zero
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.spec(i).kind == ParamKind::kBias)
            for (double v : a.at(i).data()) CHECK(v == 0.0);

    // empirical variance of large weight tensors ~ 1/(3 fan_in)
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& spec = a.spec(i);
        if (spec.kind == ParamKind::kBias || a.at(i).numel() < 10000) continue;
        double m = 0.0, m2 = 0.0;
        for (double v : a.at(i).data()) m += v, m2 += v * v;
        const double n = static_cast<double>(a.at(i).numel());
        m /= n;
        const double var = m2 / n - m * m;
        const double want = 1.0 / (3.0 * static_cast<double>(spec.fan_in));
        CHECK(var == doctest::Approx(want).epsilon(0.2));
    }
}

TEST_CASE("parameter specs: canonical order, unique names, store lookup") {
    ArchConfig cfg = toy_config();
    auto specs = parameter_specs(cfg);
    std::set<std::string> names;
    for (const auto& s : specs) names.insert(s.name);
    CHECK(names.size() == specs.size());

    // stem first, head last, weight-before-bias within a layer
    CHECK(specs.front().name == "stem.fc1.weight");
    CHECK(specs[1].name == "stem.fc1.bias");
    CHECK(specs.back().name == "head.bias");
    CHECK(specs[specs.size() - 2].name == "head.weight");

    ParameterStore store(cfg);
    CHECK(store.size() == specs.size());
    CHECK(store.by_name("block0.ub.conv.weight").shape() ==
          std::vector<std::int64_t>{12, 4, 3, 3});
    CHECK(store.by_name("block1.skip.weight").shape() == std::vector<std::int64_t>{2, 3, 1, 1});
    CHECK_THROWS_AS(store.by_name("nonexistent"), std::invalid_argument);
    CHECK(store.total_scalars() == count_params(cfg));
}

TEST_CASE("count_params and count_macs_per_pixel match hand totals") {
    // No blocks: PE(1 level) -> stem(1 hidden -> 1x2x2 grid) -> 1x1 head.
    ArchConfig tiny;
    tiny.pe_base = 2.0;
    tiny.pe_levels = 1;
    tiny.stem_hidden = 1;
    tiny.h0 = 2, tiny.w0 = 2, tiny.c0 = 1;
    tiny.head_kernel = 1;
    CHECK(count_params(tiny) == 17);  // (2+1) + (4+4) + (3+3)
    // fc1: 2 MACs; fc2: 4; head: 1*1*1*3*(2*2)=12; frame 2x2
    CHECK(count_macs_per_pixel(tiny) == doctest::Approx(18.0 / 4.0).epsilon(1e-12));

    ArchConfig cfg = toy_config();
    // hand-computed per layer, weights + biases
    const std::int64_t stem = (6 * 8 + 6) + (64 * 6 + 64);
    const std::int64_t b0 = (4 * 9 + 4) + (8 * 4 + 8) + (4 * 8 + 4) + (12 * 4 * 9 + 12) +
                            (3 * 9 + 3) + (6 * 3 + 6) + (3 * 6 + 3) + (3 * 4 + 3);
    const std::int64_t b1 = (3 * 9 + 3) + (6 * 3 + 6) + (3 * 6 + 3) + (8 * 3 * 9 + 8) +
                            (2 * 9 + 2) + (4 * 2 + 4) + (2 * 4 + 2) + (2 * 3 + 2);
    const std::int64_t head = 3 * 2 * 9 + 3;
    CHECK(count_params(cfg) == stem + b0 + b1 + head);
}

TEST_CASE("variant star widens only post-upsample expansions") {
    ArchConfig base = toy_config();
    ArchConfig star = toy_config();
    star.variant_star = true;
    // per block: e*C*(2C+1) extra scalars, C = out_channels
    std::int64_t delta = 0;
    for (const auto& b : base.blocks) {
        const std::int64_t c = b.out_channels, e = b.expansion;
        delta += e * c * (2 * c + 1);
    }
    CHECK(count_params(star) - count_params(base) == delta);

    // forward still meets the contract
    ParameterStore store = init_params(star, 3);
    Tensor y = model_forward(0.5, star, store);
    CHECK(y.shape() == std::vector<std::int64_t>{1, 3, 16, 16});
}

TEST_CASE("preset configs: geometry, sizes ordered, invalid inputs rejected") {
    ArchConfig xs = preset_config("xsmall", 64, 64);
    CHECK(xs.h0 == 4);
    CHECK(xs.w0 == 4);
    CHECK(xs.frame_h() == 64);
    CHECK(xs.frame_w() == 64);
    CHECK(xs.blocks.size() == 4);

    const std::int64_t nx = count_params(preset_config("xsmall", 64, 64));
    const std::int64_t ns = count_params(preset_config("small", 64, 64));
    const std::int64_t nm = count_params(preset_config("medium", 64, 64));
    const std::int64_t nl = count_params(preset_config("large", 64, 64));
    CHECK(nx < ns);
    CHECK(ns < nm);
    CHECK(nm < nl);

    CHECK_THROWS_AS(preset_config("gigantic", 64, 64), DataError);
    CHECK_THROWS_AS(preset_config("small", 60, 64), DataError);

    ArchConfig bad = toy_config();
    bad.head_kernel = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = toy_config();
    bad.pe_base = 0.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("bind_params rejects a store built for a different config") {
    ArchConfig cfg = toy_config();
    ArchConfig other = toy_config();
    other.blocks[0].out_channels = 4;
    ParameterStore store(other);
    CHECK_THROWS_AS(bind_params(cfg, store), std::invalid_argument);
}

TEST_CASE("model gradients pass finite differences on the toy config") {
    ArchConfig cfg = toy_config();
    ParameterStore store = init_params(cfg, 17);
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < store.size(); ++i) inputs.push_back(store.at(i));

    Rng rng(23);
    auto fn = [&](const std::vector<Tensor>&) { return model_forward(0.37, cfg, store); };
    auto report = test::check_gradients(fn, inputs, rng);
    INFO(report.worst);
    CHECK(report.max_err < 1e-4);
}
