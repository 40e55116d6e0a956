#include "nervpp/compression.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <queue>
#include <stdexcept>
#include <string>
#include <tuple>

#include "nervpp/common.hpp"

namespace nervpp {

namespace {

constexpr int kMaxCodeLen = 16;
constexpr char kMagic[4] = {'N', 'R', 'V', 'P'};
constexpr std::uint8_t kVersion = 1;

struct ByteWriter {
    std::vector<std::uint8_t> out;

    void u8(std::uint8_t v) { out.push_back(v); }
    void u16(std::uint16_t v) { u8(v & 0xff), u8(v >> 8); }
    void u32(std::uint32_t v) { u16(v & 0xffff), u16(v >> 16); }
    void u64(std::uint64_t v) {
        u32(static_cast<std::uint32_t>(v)), u32(static_cast<std::uint32_t>(v >> 32));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::span<const std::uint8_t> b) { out.insert(out.end(), b.begin(), b.end()); }
};

struct ByteReader {
    std::span<const std::uint8_t> in;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > in.size()) throw DataError("truncated bitstream");
    }
    std::uint8_t u8() {
        need(1);
        return in[pos++];
    }
    std::uint16_t u16() {
        const std::uint16_t lo = u8();
        return static_cast<std::uint16_t>(lo | (u8() << 8));
    }
    std::uint32_t u32() {
        const std::uint32_t lo = u16();
        return lo | (static_cast<std::uint32_t>(u16()) << 16);
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        return lo | (static_cast<std::uint64_t>(u32()) << 32);
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::span<const std::uint8_t> bytes(std::size_t n) {
        need(n);
        auto s = in.subspan(pos, n);
        pos += n;
        return s;
    }
    bool done() const { return pos == in.size(); }
};

std::uint8_t fit_u8(std::int64_t v, const char* what) {
    if (v < 0 || v > 0xff) throw DataError(std::string(what) + " does not fit in the format");
    return static_cast<std::uint8_t>(v);
}

std::uint16_t fit_u16(std::int64_t v, const char* what) {
    if (v < 0 || v > 0xffff) throw DataError(std::string(what) + " does not fit in the format");
    return static_cast<std::uint16_t>(v);
}

std::uint32_t fit_u32(std::int64_t v, const char* what) {
    if (v < 0 || v > 0xffffffffLL)
        throw DataError(std::string(what) + " does not fit in the format");
    return static_cast<std::uint32_t>(v);
}

// Code lengths of an optimal prefix code capped at max_len, via the
// package-merge construction. leaves are (freq, symbol) sorted ascending.
void package_merge(const std::vector<std::pair<std::uint64_t, int>>& leaves, int max_len,
                   std::array<std::uint8_t, 256>& lengths) {
    struct Item {
        std::uint64_t w;
        std::vector<int> syms;
    };
    const std::size_t n = leaves.size();
    std::vector<Item> prev;
    for (int level = 0; level < max_len; ++level) {
        std::vector<Item> packages;
        for (std::size_t i = 0; i + 1 < prev.size(); i += 2) {
            Item p;
            p.w = prev[i].w + prev[i + 1].w;
            p.syms = prev[i].syms;
            p.syms.insert(p.syms.end(), prev[i + 1].syms.begin(), prev[i + 1].syms.end());
            packages.push_back(std::move(p));
        }
        std::vector<Item> row;
        row.reserve(n + packages.size());
        std::size_t li = 0, pi = 0;
        while (li < n || pi < packages.size()) {
            const bool take_leaf =
                pi == packages.size() || (li < n && leaves[li].first <= packages[pi].w);
            if (take_leaf) {
                row.push_back(Item{leaves[li].first, {leaves[li].second}});
                ++li;
            } else {
                row.push_back(std::move(packages[pi++]));
            }
        }
        prev = std::move(row);
    }
    if (prev.size() < 2 * n - 2) throw NumericError("package-merge underflow");
    for (std::size_t i = 0; i < 2 * n - 2; ++i)
        for (int s : prev[i].syms) ++lengths[s];
}

// Plain Huffman depths; returns false when some depth exceeds max_len.
bool huffman_depths(const std::vector<std::pair<std::uint64_t, int>>& leaves, int max_len,
                    std::array<std::uint8_t, 256>& lengths) {
    struct Node {
        std::uint64_t w;
        int left = -1, right = -1, sym = -1;
    };
    std::vector<Node> nodes;
    using QE = std::pair<std::uint64_t, int>;  // (weight, node index)
    std::priority_queue<QE, std::vector<QE>, std::greater<>> q;
    for (const auto& [w, s] : leaves) {
        q.emplace(w, static_cast<int>(nodes.size()));
        nodes.push_back(Node{w, -1, -1, s});
    }
    while (q.size() > 1) {
        auto [wa, a] = q.top();
        q.pop();
        auto [wb, b] = q.top();
        q.pop();
        q.emplace(wa + wb, static_cast<int>(nodes.size()));
        nodes.push_back(Node{wa + wb, a, b, -1});
    }
    // depth-first from the root; tree depth is bounded by the leaf count
    std::vector<std::pair<int, int>> stack{{q.top().second, 0}};
    int max_depth = 0;
    while (!stack.empty()) {
        auto [i, d] = stack.back();
        stack.pop_back();
        if (nodes[i].sym >= 0) {
            lengths[nodes[i].sym] = static_cast<std::uint8_t>(std::max(d, 1));
            max_depth = std::max(max_depth, std::max(d, 1));
        } else {
            stack.push_back({nodes[i].left, d + 1});
            stack.push_back({nodes[i].right, d + 1});
        }
    }
    return max_depth <= max_len;
}

void rle_write_lengths(ByteWriter& w, const std::array<std::uint8_t, 256>& lengths) {
    int i = 0;
    while (i < 256) {
        int j = i;
        while (j < 256 && lengths[j] == lengths[i]) ++j;
        int run = j - i;
        while (run > 0) {
            const int chunk = std::min(run, 255);
            w.u8(static_cast<std::uint8_t>(chunk));
            w.u8(lengths[i]);
            run -= chunk;
        }
        i = j;
    }
    w.u8(0);
    w.u8(0);
}

std::array<std::uint8_t, 256> rle_read_lengths(ByteReader& r) {
    std::array<std::uint8_t, 256> lengths{};
    int total = 0;
    for (;;) {
        const int count = r.u8();
        const int len = r.u8();
        if (count == 0) {
            if (len != 0) throw DataError("malformed code-length run");
            break;
        }
        if (len > kMaxCodeLen) throw DataError("code length exceeds 16");
        if (total + count > 256) throw DataError("code-length runs overflow the alphabet");
        for (int k = 0; k < count; ++k) lengths[total++] = static_cast<std::uint8_t>(len);
    }
    if (total != 256) throw DataError("code-length runs do not cover the alphabet");
    return lengths;
}

void check_store_matches(const ParameterStore& params, const std::vector<ParamSpec>& specs) {
    if (specs.size() != params.size())
        throw std::invalid_argument("parameter store does not match config");
    for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].shape != params.at(i).shape())
            throw std::invalid_argument("parameter shape mismatch at " + specs[i].name);
}

}  // namespace

PruneMask prune_l1_global(const ParameterStore& params, double ratio) {
    if (!(ratio >= 0.0 && ratio < 1.0))
        throw std::invalid_argument("prune ratio must lie in [0, 1)");
    PruneMask mask;
    mask.keep.resize(params.size());

    struct Entry {
        double mag;
        std::size_t tensor;
        std::int64_t idx;
    };
    std::vector<Entry> entries;
    std::int64_t n_conv = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params.spec(i).kind != ParamKind::kConvWeight) continue;
        const auto d = params.at(i).data();
        mask.keep[i].assign(d.size(), 1);
        n_conv += static_cast<std::int64_t>(d.size());
        for (std::size_t j = 0; j < d.size(); ++j)
            entries.push_back({std::abs(d[j]), i, static_cast<std::int64_t>(j)});
    }
    const auto n_prune =
        static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(n_conv)));
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        return std::tie(a.mag, a.tensor, a.idx) < std::tie(b.mag, b.tensor, b.idx);
    });
    for (std::int64_t k = 0; k < n_prune; ++k)
        mask.keep[entries[k].tensor][entries[k].idx] = 0;
    return mask;
}

void apply_mask(ParameterStore& params, const PruneMask& mask) {
    if (mask.keep.size() != params.size())
        throw std::invalid_argument("mask does not match parameter store");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (mask.keep[i].empty()) continue;
        auto d = params.at(i).mutable_data();
        if (mask.keep[i].size() != d.size())
            throw std::invalid_argument("mask shape mismatch at tensor " + std::to_string(i));
        for (std::size_t j = 0; j < d.size(); ++j)
            if (!mask.keep[i][j]) d[j] = 0.0;
    }
}

QuantTensor quantize_per_tensor(const Tensor& w, int bits) {
    if (bits < 2 || bits > 8) throw std::invalid_argument("quantization bits must be in 2..8");
    const auto d = w.data();
    if (d.empty()) throw std::invalid_argument("cannot quantize an empty tensor");
    double mn = d[0], mx = d[0];
    for (double v : d) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in quantizer input");
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    const double levels = static_cast<double>((1 << bits) - 1);
    // f32 rounding first: the bitstream carries f32 scale/min, and q must
    // be optimal for the values the decoder will actually use.
    float scale_f = static_cast<float>((mx - mn) / levels);
    if (!(scale_f > 0.0f)) scale_f = 1.0f;
    const float min_f = static_cast<float>(mn);

    QuantTensor qt;
    qt.scale = static_cast<double>(scale_f);
    qt.min_val = static_cast<double>(min_f);
    qt.shape = w.shape();
    qt.q.resize(d.size());
    const double hi = levels;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double r = std::nearbyint((d[i] - qt.min_val) / qt.scale);
        qt.q[i] = static_cast<std::uint8_t>(std::clamp(r, 0.0, hi));
    }
    return qt;
}

Tensor dequantize(const QuantTensor& qt) {
    std::vector<double> d(qt.q.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = static_cast<double>(qt.q[i]) * qt.scale + qt.min_val;
    return Tensor::from_vector(qt.shape, std::move(d));
}

void HuffmanTable::build_codes() {
    std::uint32_t kraft = 0;
    std::array<int, kMaxCodeLen + 1> bl_count{};
    for (int s = 0; s < 256; ++s) {
        if (lengths[s] == 0) continue;
        if (lengths[s] > kMaxCodeLen) throw DataError("code length exceeds 16");
        ++bl_count[lengths[s]];
        kraft += 1u << (kMaxCodeLen - lengths[s]);
    }
    if (kraft > (1u << kMaxCodeLen)) throw DataError("code lengths violate the Kraft bound");

    std::array<std::uint32_t, kMaxCodeLen + 2> next{};
    std::uint32_t code = 0;
    for (int len = 1; len <= kMaxCodeLen; ++len) {
        code = (code + bl_count[len - 1]) << 1;
        next[len] = code;
    }
    codes.fill(0);
    for (int s = 0; s < 256; ++s)
        if (lengths[s]) codes[s] = static_cast<std::uint16_t>(next[lengths[s]]++);
}

HuffmanTable huffman_build(const std::array<std::uint64_t, 256>& freqs) {
    std::vector<std::pair<std::uint64_t, int>> leaves;
    for (int s = 0; s < 256; ++s)
        if (freqs[s]) leaves.emplace_back(freqs[s], s);
    if (leaves.empty()) throw std::invalid_argument("empty symbol histogram");

    HuffmanTable t;
    if (leaves.size() == 1) {
        t.lengths[leaves[0].second] = 1;
        t.build_codes();
        return t;
    }
    std::sort(leaves.begin(), leaves.end());
    if (!huffman_depths(leaves, kMaxCodeLen, t.lengths)) {
        t.lengths.fill(0);
        package_merge(leaves, kMaxCodeLen, t.lengths);
    }
    t.build_codes();
    return t;
}

std::vector<std::uint8_t> huffman_encode(std::span<const std::uint8_t> symbols,
                                         const HuffmanTable& table, std::uint64_t& bit_count) {
    std::vector<std::uint8_t> out;
    out.reserve(symbols.size());
    std::uint64_t acc = 0;
    int nbits = 0;
    bit_count = 0;
    for (std::uint8_t s : symbols) {
        const int len = table.lengths[s];
        if (len == 0) throw std::invalid_argument("symbol missing from Huffman table");
        acc = (acc << len) | table.codes[s];
        nbits += len;
        bit_count += static_cast<std::uint64_t>(len);
        while (nbits >= 8) {
            out.push_back(static_cast<std::uint8_t>(acc >> (nbits - 8)));
            nbits -= 8;
        }
    }
    if (nbits > 0) out.push_back(static_cast<std::uint8_t>(acc << (8 - nbits)));
    return out;
}

std::vector<std::uint8_t> huffman_decode(std::span<const std::uint8_t> payload,
                                         std::uint64_t bit_count, const HuffmanTable& table,
                                         std::size_t n_symbols) {
    // canonical decode tables: per length, the first code and the range of
    // symbols (ordered by length then symbol)
    std::array<std::uint32_t, kMaxCodeLen + 1> first{}, count{}, offset{};
    std::vector<std::uint8_t> sym_by_code;
    for (int len = 1; len <= kMaxCodeLen; ++len)
        for (int s = 0; s < 256; ++s)
            if (table.lengths[s] == len) {
                if (!count[len]) first[len] = table.codes[s];
                ++count[len];
            }
    std::uint32_t running = 0;
    for (int len = 1; len <= kMaxCodeLen; ++len) {
        offset[len] = running;
        running += count[len];
    }
    sym_by_code.resize(running);
    std::array<std::uint32_t, kMaxCodeLen + 1> fill{};
    for (int s = 0; s < 256; ++s) {
        const int len = table.lengths[s];
        if (len) sym_by_code[offset[len] + fill[len]++] = static_cast<std::uint8_t>(s);
    }

    if ((bit_count + 7) / 8 > payload.size()) throw DataError("payload shorter than bit count");
    std::vector<std::uint8_t> out;
    out.reserve(n_symbols);
    std::uint64_t pos = 0;
    std::uint32_t code = 0;
    int len = 0;
    while (out.size() < n_symbols) {
        if (pos >= bit_count) throw DataError("truncated Huffman payload");
        const int bit = (payload[pos >> 3] >> (7 - (pos & 7))) & 1;
        ++pos;
        code = (code << 1) | static_cast<std::uint32_t>(bit);
        ++len;
        if (len > kMaxCodeLen) throw DataError("corrupt Huffman payload");
        if (count[len] && code >= first[len] && code - first[len] < count[len]) {
            out.push_back(sym_by_code[offset[len] + (code - first[len])]);
            code = 0;
            len = 0;
        }
    }
    if (pos != bit_count) throw DataError("Huffman payload has trailing symbols");
    return out;
}

std::vector<std::uint8_t> serialize(const CompressedModel& m) {
    const auto specs = parameter_specs(m.arch);
    if (m.tensors.size() != specs.size())
        throw DataError("compressed model tensor list does not match its architecture");
    if (m.h != static_cast<std::uint32_t>(m.arch.frame_h()) ||
        m.w != static_cast<std::uint32_t>(m.arch.frame_w()))
        throw DataError("frame dimensions disagree with the architecture");
    if (m.t < 1) throw DataError("frame count must be positive");
    if (m.payload.size() != (m.payload_bits + 7) / 8)
        throw DataError("payload length disagrees with bit count");

    ByteWriter w;
    w.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
    w.u8(kVersion);
    w.u8(m.arch.variant_star ? 1 : 0);
    w.f32(static_cast<float>(m.arch.pe_base));
    w.u16(fit_u16(m.arch.pe_levels, "pe_levels"));
    w.u16(fit_u16(m.arch.stem_hidden, "stem_hidden"));
    w.u16(fit_u16(m.arch.h0, "h0"));
    w.u16(fit_u16(m.arch.w0, "w0"));
    w.u16(fit_u16(m.arch.c0, "c0"));
    w.u8(fit_u8(static_cast<std::int64_t>(m.arch.blocks.size()), "block count"));
    for (const auto& b : m.arch.blocks) {
        w.u8(fit_u8(b.stride, "stride"));
        w.u16(fit_u16(b.out_channels, "out_channels"));
        w.u8(fit_u8(b.dw_kernel, "dw_kernel"));
        w.u8(fit_u8(b.expansion, "expansion"));
    }
    w.u8(fit_u8(m.arch.head_kernel, "head_kernel"));
    w.u32(m.t);
    w.u32(m.h);
    w.u32(m.w);
    w.u16(fit_u16(static_cast<std::int64_t>(m.tensors.size()), "tensor count"));
    for (const auto& t : m.tensors) {
        w.u8(fit_u8(static_cast<std::int64_t>(t.dims.size()), "tensor rank"));
        for (auto d : t.dims) w.u32(fit_u32(d, "tensor dim"));
        w.f32(static_cast<float>(t.scale));
        w.f32(static_cast<float>(t.min_val));
    }
    rle_write_lengths(w, m.table.lengths);
    w.u64(m.payload_bits);
    w.bytes(m.payload);
    return w.out;
}

CompressedModel deserialize(std::span<const std::uint8_t> bytes) {
    ByteReader r{bytes};
    const auto magic = r.bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw DataError("bad magic");
    if (r.u8() != kVersion) throw DataError("unsupported bitstream version");
    const std::uint8_t flags = r.u8();
    if (flags & ~1u) throw DataError("unknown flag bits set");

    CompressedModel m;
    m.arch.variant_star = (flags & 1u) != 0;
    m.arch.pe_base = static_cast<double>(r.f32());
    m.arch.pe_levels = r.u16();
    m.arch.stem_hidden = r.u16();
    m.arch.h0 = r.u16();
    m.arch.w0 = r.u16();
    m.arch.c0 = r.u16();
    const int n_blocks = r.u8();
    for (int i = 0; i < n_blocks; ++i) {
        BlockSpec b;
        b.stride = r.u8();
        b.out_channels = r.u16();
        b.dw_kernel = r.u8();
        b.expansion = r.u8();
        m.arch.blocks.push_back(b);
    }
    m.arch.head_kernel = r.u8();
    try {
        m.arch.validate();
    } catch (const std::invalid_argument& e) {
        throw DataError(std::string("invalid architecture in stream: ") + e.what());
    }
    m.t = r.u32();
    m.h = r.u32();
    m.w = r.u32();
    if (m.t < 1) throw DataError("frame count must be positive");
    if (m.h != static_cast<std::uint32_t>(m.arch.frame_h()) ||
        m.w != static_cast<std::uint32_t>(m.arch.frame_w()))
        throw DataError("frame dimensions disagree with the architecture");

    const auto specs = parameter_specs(m.arch);
    const int n_tensors = r.u16();
    if (static_cast<std::size_t>(n_tensors) != specs.size())
        throw DataError("tensor count disagrees with the architecture");
    for (int i = 0; i < n_tensors; ++i) {
        TensorQuantInfo info;
        const int ndims = r.u8();
        for (int d = 0; d < ndims; ++d) info.dims.push_back(r.u32());
        info.scale = static_cast<double>(r.f32());
        info.min_val = static_cast<double>(r.f32());
        if (!(info.scale > 0.0) || !std::isfinite(info.scale) || !std::isfinite(info.min_val))
            throw DataError("invalid quantization parameters");
        if (info.dims != specs[i].shape)
            throw DataError("tensor shape disagrees with the architecture at " + specs[i].name);
        m.tensors.push_back(std::move(info));
    }
    m.table.lengths = rle_read_lengths(r);
    m.table.build_codes();
    m.payload_bits = r.u64();
    const auto pl = r.bytes((m.payload_bits + 7) / 8);
    m.payload.assign(pl.begin(), pl.end());
    if (!r.done()) throw DataError("trailing bytes after payload");
    return m;
}

CompressedModel compress_pipeline(ParameterStore& params, const ArchConfig& arch,
                                  std::int64_t t_frames, const PruneMask* mask) {
    arch.validate();
    if (t_frames < 1) throw DataError("frame count must be positive");
    check_store_matches(params, parameter_specs(arch));
    if (mask) apply_mask(params, *mask);

    CompressedModel m;
    m.arch = arch;
    // pe_base travels as f32; round now so the stream decodes to this
    // exact structure
    m.arch.pe_base = static_cast<double>(static_cast<float>(arch.pe_base));
    m.t = fit_u32(t_frames, "frame count");
    m.h = static_cast<std::uint32_t>(arch.frame_h());
    m.w = static_cast<std::uint32_t>(arch.frame_w());

    std::vector<std::uint8_t> symbols;
    symbols.reserve(static_cast<std::size_t>(params.total_scalars()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        QuantTensor qt = quantize_per_tensor(params.at(i), 8);
        m.tensors.push_back({qt.shape, qt.scale, qt.min_val});
        symbols.insert(symbols.end(), qt.q.begin(), qt.q.end());
    }
    std::array<std::uint64_t, 256> freqs{};
    for (std::uint8_t s : symbols) ++freqs[s];
    m.table = huffman_build(freqs);
    m.payload = huffman_encode(symbols, m.table, m.payload_bits);
    return m;
}

std::pair<ArchConfig, ParameterStore> decompress(const CompressedModel& m) {
    const auto specs = parameter_specs(m.arch);
    if (m.tensors.size() != specs.size())
        throw DataError("compressed model tensor list does not match its architecture");
    std::size_t total = 0;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (m.tensors[i].dims != specs[i].shape)
            throw DataError("tensor shape disagrees with the architecture at " + specs[i].name);
        total += static_cast<std::size_t>(shape_numel(specs[i].shape));
    }
    const auto symbols = huffman_decode(m.payload, m.payload_bits, m.table, total);

    ParameterStore store(m.arch);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto d = store.at(i).mutable_data();
        const double scale = m.tensors[i].scale, mn = m.tensors[i].min_val;
        for (std::size_t j = 0; j < d.size(); ++j)
            d[j] = static_cast<double>(symbols[pos++]) * scale + mn;
    }
    return {m.arch, std::move(store)};
}

}  // namespace nervpp
