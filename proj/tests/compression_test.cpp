#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "nervpp/common.hpp"
#include "nervpp/compression.hpp"
#include "nervpp/metrics.hpp"
#include "nervpp/rng.hpp"

using namespace nervpp;

namespace {

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

std::int64_t conv_weight_count(const ParameterStore& params) {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params.spec(i).kind == ParamKind::kConvWeight) n += params.at(i).numel();
    return n;
}

// Independent mask construction: pre-sort entries by (tensor, index),
// then a stable sort on magnitude alone reproduces the tie order.
PruneMask oracle_mask(const ParameterStore& params, double ratio) {
    struct E {
        double mag;
        std::size_t t;
        std::size_t i;
    };
    std::vector<E> es;
    PruneMask mask;
    mask.keep.resize(params.size());
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params.spec(t).kind != ParamKind::kConvWeight) continue;
        const auto d = params.at(t).data();
        mask.keep[t].assign(d.size(), 1);
        for (std::size_t i = 0; i < d.size(); ++i) es.push_back({std::fabs(d[i]), t, i});
    }
    std::stable_sort(es.begin(), es.end(), [](const E& a, const E& b) { return a.mag < b.mag; });
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(es.size())));
    for (std::size_t j = 0; j < k; ++j) mask.keep[es[j].t][es[j].i] = 0;
    return mask;
}

double entropy_bits(const std::array<std::uint64_t, 256>& freqs) {
    std::uint64_t n = 0;
    for (auto f : freqs) n += f;
    double h = 0.0;
    for (auto f : freqs)
        if (f) {
            const double p = static_cast<double>(f) / static_cast<double>(n);
            h -= p * std::log2(p);
        }
    return h;
}

std::array<std::uint64_t, 256> histogram(const std::vector<std::uint8_t>& s) {
    std::array<std::uint64_t, 256> f{};
    for (auto v : s) ++f[v];
    return f;
}

}  // namespace

TEST_CASE("prune ratio zero keeps everything") {
    ArchConfig cfg = toy_config();
    ParameterStore params = init_params(cfg, 3);
    ParameterStore before = init_params(cfg, 3);

    PruneMask mask = prune_l1_global(params, 0.0);
    REQUIRE(mask.keep.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params.spec(i).kind == ParamKind::kConvWeight) {
            REQUIRE(mask.keep[i].size() == params.at(i).data().size());
            for (auto k : mask.keep[i]) CHECK(k == 1);
        } else {
            CHECK(mask.keep[i].empty());
        }
    }
    apply_mask(params, mask);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto a = params.at(i).data(), b = before.at(i).data();
        for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
    }
}

TEST_CASE("prune removes the globally smallest magnitudes") {
    ArchConfig cfg = toy_config();
    ParameterStore params = init_params(cfg, 3);
    const std::int64_t n_conv = conv_weight_count(params);

    // plant |w| = 1..10 in the first conv tensor, dwarf everything else
    std::size_t planted = params.size();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params.spec(i).kind != ParamKind::kConvWeight) continue;
        auto d = params.at(i).mutable_data();
        for (auto& v : d) v = 1000.0;
        if (planted == params.size()) {
            planted = i;
            REQUIRE(d.size() >= 10);
            for (int j = 0; j < 10; ++j) d[j] = (j % 2 ? 1.0 : -1.0) * (j + 1);
        }
    }
    const double ratio = 2.5 / static_cast<double>(n_conv);
    PruneMask mask = prune_l1_global(params, ratio);

    std::int64_t zeros = 0;
    for (const auto& t : mask.keep) zeros += std::count(t.begin(), t.end(), 0);
    CHECK(zeros == 2);  // floor(2.5) with |w| = 1 and 2 the global minima
    CHECK(mask.keep[planted][0] == 0);
    CHECK(mask.keep[planted][1] == 0);
    for (int j = 2; j < 10; ++j) CHECK(mask.keep[planted][j] == 1);
}

TEST_CASE("prune mask equals a brute-force oracle and has the threshold property") {
    ArchConfig cfg = toy_config();
    for (double ratio : {0.2, 0.37, 0.9}) {
        CAPTURE(ratio);
        ParameterStore params = init_params(cfg, 11);
        PruneMask mask = prune_l1_global(params, ratio);
        PruneMask want = oracle_mask(params, ratio);
        REQUIRE(mask.keep.size() == want.keep.size());
        for (std::size_t i = 0; i < mask.keep.size(); ++i) CHECK(mask.keep[i] == want.keep[i]);

        const std::int64_t n_conv = conv_weight_count(params);
        std::int64_t zeros = 0;
        double max_zeroed = 0.0, min_kept = 1e300;
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (mask.keep[i].empty()) continue;
            const auto d = params.at(i).data();
            for (std::size_t j = 0; j < d.size(); ++j) {
                if (mask.keep[i][j]) {
                    min_kept = std::min(min_kept, std::fabs(d[j]));
                } else {
                    ++zeros;
                    max_zeroed = std::max(max_zeroed, std::fabs(d[j]));
                }
            }
        }
        CHECK(zeros == static_cast<std::int64_t>(
                           std::floor(ratio * static_cast<double>(n_conv))));
        CHECK(max_zeroed <= min_kept);
    }
}

TEST_CASE("apply_mask zeroes masked entries and nothing else") {
    ArchConfig cfg = toy_config();
    ParameterStore params = init_params(cfg, 5);
    ParameterStore before = init_params(cfg, 5);
    PruneMask mask = prune_l1_global(params, 0.3);
    apply_mask(params, mask);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto a = params.at(i).data(), b = before.at(i).data();
        for (std::size_t j = 0; j < a.size(); ++j) {
            const bool kept = mask.keep[i].empty() || mask.keep[i][j];
            if (kept)
                CHECK(a[j] == b[j]);
            else
                CHECK(a[j] == 0.0);
        }
    }
    CHECK_THROWS_AS(prune_l1_global(params, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(prune_l1_global(params, -0.1), std::invalid_argument);
}

TEST_CASE("quantization: degenerate, formula, and rounding cases") {
    Tensor c = Tensor::full({2, 3}, 0.25);
    QuantTensor qc = quantize_per_tensor(c, 8);
    CHECK(qc.scale == 1.0);
    CHECK(qc.min_val == 0.25);
    for (auto q : qc.q) CHECK(q == 0);
    Tensor dc = dequantize(qc);
    CHECK(dc.shape() == c.shape());
    for (double v : dc.data()) CHECK(v == 0.25);

    Tensor span = Tensor::from_vector({4}, {-1.0, -0.5, 0.5, 1.0});
    QuantTensor qs = quantize_per_tensor(span, 8);
    CHECK(qs.scale == static_cast<double>(static_cast<float>(2.0 / 255.0)));
    CHECK(qs.min_val == -1.0);
    CHECK(qs.q[0] == 0);
    CHECK(qs.q[3] == 255);

    // scale is exactly 1 here, so steps land on integer midpoints and
    // round-half-to-even becomes observable
    Tensor half = Tensor::from_vector({6}, {0.0, 255.0, 0.5, 1.5, 2.5, 3.5});
    QuantTensor qh = quantize_per_tensor(half, 8);
    REQUIRE(qh.scale == 1.0);
    CHECK(qh.q[2] == 0);
    CHECK(qh.q[3] == 2);
    CHECK(qh.q[4] == 2);
    CHECK(qh.q[5] == 4);
}

TEST_CASE("quantization error is at most half a step, any bit width") {
    Rng rng(99);
    for (int bits : {2, 4, 8}) {
        CAPTURE(bits);
        std::vector<double> v(500);
        for (auto& x : v) x = rng.uniform(-1.3, 0.9);
        Tensor w = Tensor::from_vector({500}, std::vector<double>(v));
        QuantTensor qt = quantize_per_tensor(w, bits);
        const auto hi = static_cast<std::uint8_t>((1 << bits) - 1);
        Tensor d = dequantize(qt);
        for (std::size_t i = 0; i < v.size(); ++i) {
            CHECK(qt.q[i] <= hi);
            CHECK(std::fabs(d.data()[i] - v[i]) <= qt.scale / 2 + 1e-12);
        }
    }
    CHECK_THROWS_AS(quantize_per_tensor(Tensor::full({2}, 0.0), 1), std::invalid_argument);
    CHECK_THROWS_AS(quantize_per_tensor(Tensor::full({2}, 0.0), 9), std::invalid_argument);
    Tensor bad = Tensor::full({2}, 0.0);
    bad.mutable_data()[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(quantize_per_tensor(bad, 8), NumericError);
}

TEST_CASE("huffman hand construction: freqs {1,1,2}") {
    std::array<std::uint64_t, 256> freqs{};
    freqs[5] = 1, freqs[9] = 1, freqs[17] = 2;
    HuffmanTable t = huffman_build(freqs);
    CHECK(t.lengths[5] == 2);
    CHECK(t.lengths[9] == 2);
    CHECK(t.lengths[17] == 1);
    // canonical assignment: by length, then symbol
    CHECK(t.codes[17] == 0);
    CHECK(t.codes[5] == 2);
    CHECK(t.codes[9] == 3);

    std::vector<std::uint8_t> msg = {17, 5, 9};  // bits 0 10 11 -> 01011000
    std::uint64_t bits = 0;
    auto payload = huffman_encode(msg, t, bits);
    CHECK(bits == 5);
    REQUIRE(payload.size() == 1);
    CHECK(payload[0] == 0x58);
    CHECK(huffman_decode(payload, bits, t, msg.size()) == msg);
}

TEST_CASE("huffman degenerate alphabet: one symbol, one bit each") {
    std::array<std::uint64_t, 256> freqs{};
    freqs[42] = 7;
    HuffmanTable t = huffman_build(freqs);
    CHECK(t.lengths[42] == 1);
    std::vector<std::uint8_t> msg(5, 42);
    std::uint64_t bits = 0;
    auto payload = huffman_encode(msg, t, bits);
    CHECK(bits == 5);
    CHECK(huffman_decode(payload, bits, t, 5) == msg);

    std::array<std::uint64_t, 256> empty{};
    CHECK_THROWS_AS(huffman_build(empty), std::invalid_argument);
}

TEST_CASE("huffman round-trip and the entropy+1 bound on random streams") {
    Rng rng(123);
    for (int mode = 0; mode < 3; ++mode) {
        CAPTURE(mode);
        std::vector<std::uint8_t> msg(1000);
        for (auto& s : msg) {
            const double u = rng.uniform(0.0, 1.0);
            if (mode == 0)
                s = static_cast<std::uint8_t>(u * 30.0);  // near-uniform
            else if (mode == 1)
                s = static_cast<std::uint8_t>(std::min(12.0, -3.0 * std::log2(u)));  // skewed
            else
                s = u < 0.95 ? 0 : 200;  // heavily biased pair
        }
        const auto freqs = histogram(msg);
        HuffmanTable t = huffman_build(freqs);
        std::uint64_t bits = 0;
        auto payload = huffman_encode(msg, t, bits);
        CHECK(huffman_decode(payload, bits, t, msg.size()) == msg);

        const double mean_len = static_cast<double>(bits) / static_cast<double>(msg.size());
        const double h = entropy_bits(freqs);
        CHECK(mean_len >= h - 1e-12);
        CHECK(mean_len < h + 1.0);

        // the modal symbol must get a minimal-length code
        const auto modal = static_cast<std::uint8_t>(
            std::max_element(freqs.begin(), freqs.end()) - freqs.begin());
        int shortest = 17;
        for (int s = 0; s < 256; ++s)
            if (t.lengths[s]) shortest = std::min(shortest, static_cast<int>(t.lengths[s]));
        CHECK(t.lengths[modal] == shortest);
    }
}

TEST_CASE("huffman falls back to a 16-bit-limited code on skewed histograms") {
    // Fibonacci frequencies force a caterpillar tree: 20 leaves would need
    // depth 19 without the limit.
    std::array<std::uint64_t, 256> freqs{};
    std::uint64_t a = 1, b = 1;
    for (int s = 0; s < 20; ++s) {
        freqs[s] = a;
        const std::uint64_t next = a + b;
        a = b, b = next;
    }
    HuffmanTable t = huffman_build(freqs);
    std::uint32_t kraft = 0;
    for (int s = 0; s < 256; ++s) {
        if (!freqs[s]) {
            CHECK(t.lengths[s] == 0);
            continue;
        }
        REQUIRE(t.lengths[s] >= 1);
        REQUIRE(t.lengths[s] <= 16);
        kraft += 1u << (16 - t.lengths[s]);
    }
    CHECK(kraft <= 65536);

    std::vector<std::uint8_t> msg;
    for (int s = 0; s < 20; ++s)
        for (int k = 0; k < 3; ++k) msg.push_back(static_cast<std::uint8_t>(s));
    std::uint64_t bits = 0;
    auto payload = huffman_encode(msg, t, bits);
    CHECK(huffman_decode(payload, bits, t, msg.size()) == msg);
}

TEST_CASE("huffman error paths") {
    std::array<std::uint64_t, 256> freqs{};
    freqs[1] = 3, freqs[2] = 1, freqs[3] = 1;
    HuffmanTable t = huffman_build(freqs);

    std::vector<std::uint8_t> bad = {1, 7};
    std::uint64_t bits = 0;
    CHECK_THROWS_AS(huffman_encode(bad, t, bits), std::invalid_argument);

    std::vector<std::uint8_t> msg = {1, 2, 3, 1};
    auto payload = huffman_encode(msg, t, bits);
    CHECK_THROWS_AS(huffman_decode(payload, bits, t, msg.size() + 1), DataError);
    CHECK_THROWS_AS(huffman_decode(payload, bits, t, msg.size() - 1), DataError);
    CHECK_THROWS_AS(huffman_decode(payload, bits + 16, t, msg.size()), DataError);
    std::vector<std::uint8_t> short_payload(payload.begin(), payload.end() - 1);
    CHECK_THROWS_AS(huffman_decode(short_payload, bits, t, msg.size()), DataError);

    HuffmanTable over;
    over.lengths[0] = over.lengths[1] = over.lengths[2] = 1;  // Kraft sum 3/2
    CHECK_THROWS_AS(over.build_codes(), DataError);
    HuffmanTable deep;
    deep.lengths[0] = 17;
    CHECK_THROWS_AS(deep.build_codes(), DataError);
}

TEST_CASE("bitstream: serialize/deserialize/serialize is byte-idempotent") {
    ArchConfig cfg = toy_config();
    ParameterStore params = init_params(cfg, 7);
    PruneMask mask = prune_l1_global(params, 0.2);
    CompressedModel m = compress_pipeline(params, cfg, 4, &mask);

    const auto b1 = serialize(m);
    CompressedModel m2 = deserialize(b1);
    const auto b2 = serialize(m2);
    CHECK(b1 == b2);

    // pe_base is carried at f32 precision
    CHECK(m.arch.pe_base == static_cast<double>(static_cast<float>(cfg.pe_base)));
    CHECK(m2.arch.pe_base == m.arch.pe_base);
    CHECK(m2.arch.pe_levels == cfg.pe_levels);
    CHECK(m2.arch.stem_hidden == cfg.stem_hidden);
    CHECK(m2.arch.h0 == cfg.h0);
    CHECK(m2.arch.w0 == cfg.w0);
    CHECK(m2.arch.c0 == cfg.c0);
    CHECK(m2.arch.head_kernel == cfg.head_kernel);
    CHECK(m2.arch.variant_star == cfg.variant_star);
    REQUIRE(m2.arch.blocks.size() == cfg.blocks.size());
    for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
        CHECK(m2.arch.blocks[i].stride == cfg.blocks[i].stride);
        CHECK(m2.arch.blocks[i].out_channels == cfg.blocks[i].out_channels);
        CHECK(m2.arch.blocks[i].dw_kernel == cfg.blocks[i].dw_kernel);
        CHECK(m2.arch.blocks[i].expansion == cfg.blocks[i].expansion);
    }
    CHECK(m2.t == 4);
    CHECK(m2.h == 16);
    CHECK(m2.w == 16);
    REQUIRE(m2.tensors.size() == m.tensors.size());
    for (std::size_t i = 0; i < m.tensors.size(); ++i) {
        CHECK(m2.tensors[i].dims == m.tensors[i].dims);
        CHECK(m2.tensors[i].scale == m.tensors[i].scale);
        CHECK(m2.tensors[i].min_val == m.tensors[i].min_val);
    }
    CHECK(m2.table.lengths == m.table.lengths);
    CHECK(m2.payload_bits == m.payload_bits);
    CHECK(m2.payload == m.payload);

    // bpp bookkeeping, by hand
    const double want = 8.0 * static_cast<double>(b1.size()) / (4.0 * 16.0 * 16.0);
    CHECK(bpp(static_cast<std::int64_t>(b1.size()), 4, 16, 16) == want);
}

TEST_CASE("bitstream rejects corruption, truncation, and trailing bytes") {
    ArchConfig cfg = toy_config();
    ParameterStore params = init_params(cfg, 7);
    CompressedModel m = compress_pipeline(params, cfg, 2);
    const auto bytes = serialize(m);

    auto broken = bytes;
    broken[0] = 'X';
    CHECK_THROWS_AS(deserialize(broken), DataError);

    broken = bytes;
    broken[4] = 2;  // version
    CHECK_THROWS_AS(deserialize(broken), DataError);

    broken = bytes;
    broken[5] |= 0x02;  // undefined flag bit
    CHECK_THROWS_AS(deserialize(broken), DataError);

    for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{10},
                            bytes.size() / 2, bytes.size() - 1}) {
        CAPTURE(len);
        std::vector<std::uint8_t> prefix(bytes.begin(), bytes.begin() + len);
        CHECK_THROWS_AS(deserialize(prefix), DataError);
    }

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(deserialize(trailing), DataError);

    CompressedModel zero_t = m;
    zero_t.t = 0;
    CHECK_THROWS_AS(serialize(zero_t), DataError);
    CompressedModel bad_h = m;
    bad_h.h = 17;
    CHECK_THROWS_AS(serialize(bad_h), DataError);
}

TEST_CASE("pipeline: entropy stage is lossless and runs are deterministic") {
    ArchConfig cfg = toy_config();
    ParameterStore params = init_params(cfg, 21);
    PruneMask mask = prune_l1_global(params, 0.2);
    CompressedModel m = compress_pipeline(params, cfg, 3, &mask);

    // compress_pipeline applied the mask to params; re-quantize per tensor
    // and compare against the decoded payload
    std::vector<std::uint8_t> want;
    for (std::size_t i = 0; i < params.size(); ++i) {
        QuantTensor qt = quantize_per_tensor(params.at(i), 8);
        want.insert(want.end(), qt.q.begin(), qt.q.end());
        CHECK(m.tensors[i].scale == qt.scale);
        CHECK(m.tensors[i].min_val == qt.min_val);
    }
    CHECK(huffman_decode(m.payload, m.payload_bits, m.table, want.size()) == want);

    ParameterStore again = init_params(cfg, 21);
    PruneMask mask2 = prune_l1_global(again, 0.2);
    CompressedModel m2 = compress_pipeline(again, cfg, 3, &mask2);
    CHECK(serialize(m) == serialize(m2));

    CHECK_THROWS_AS(compress_pipeline(params, cfg, 0), DataError);
}

TEST_CASE("pipeline: decompression reproduces the model within 8-bit tolerance") {
    ArchConfig cfg = toy_config();
    ParameterStore params = init_params(cfg, 33);
    ParameterStore original = init_params(cfg, 33);
    CompressedModel m = compress_pipeline(params, cfg, 2);

    auto [arch2, store2] = decompress(m);
    CHECK(arch2.frame_h() == cfg.frame_h());
    CHECK(arch2.frame_w() == cfg.frame_w());
    REQUIRE(store2.size() == params.size());
    double max_err = 0.0;
    for (std::size_t i = 0; i < store2.size(); ++i) {
        REQUIRE(store2.at(i).shape() == params.at(i).shape());
        const auto a = store2.at(i).data(), b = original.at(i).data();
        QuantTensor qt = quantize_per_tensor(original.at(i), 8);
        for (std::size_t j = 0; j < a.size(); ++j) {
            CHECK(std::fabs(a[j] - b[j]) <= qt.scale / 2 + 1e-12);
            max_err = std::max(max_err, std::fabs(a[j] - b[j]));
        }
    }
    CHECK(max_err > 0.0);  // quantization actually happened

    Tensor y0 = model_forward(0.3, cfg, original);
    Tensor y1 = model_forward(0.3, cfg, store2);
    double max_out = 0.0;
    for (std::size_t i = 0; i < y0.data().size(); ++i)
        max_out = std::max(max_out, std::fabs(y0.data()[i] - y1.data()[i]));
    CHECK(max_out < 0.05);
}

TEST_CASE("pipeline: heavier pruning never grows the bitstream") {
    ArchConfig cfg = toy_config();
    std::vector<std::size_t> sizes;
    for (double ratio : {0.0, 0.2, 0.5}) {
        ParameterStore params = init_params(cfg, 13);
        PruneMask mask = prune_l1_global(params, ratio);
        CompressedModel m = compress_pipeline(params, cfg, 2, &mask);
        sizes.push_back(serialize(m).size());
    }
    CHECK(sizes[1] <= sizes[0]);
    CHECK(sizes[2] <= sizes[1]);
}
