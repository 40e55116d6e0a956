#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "nervpp/model.hpp"

namespace nervpp {

// Per-parameter keep flags (1 = keep). Entries for non-prunable tensors
// (biases, stem linear weights) stay empty.
struct PruneMask {
    std::vector<std::vector<std::uint8_t>> keep;
};

// Marks the floor(ratio * N_conv) conv weights of smallest |w| across
// all conv tensors; ties resolved by canonical tensor order, then flat
// index. ratio in [0, 1).
PruneMask prune_l1_global(const ParameterStore& params, double ratio);

void apply_mask(ParameterStore& params, const PruneMask& mask);

// Min-max affine quantization of one tensor. scale/min_val are rounded
// to 32-bit floats up front (they ship in the bitstream as f32), and q
// is computed against the rounded values so dequantization is exact on
// both sides of the codec.
struct QuantTensor {
    std::vector<std::uint8_t> q;
    double scale = 1.0;    // float-valued
    double min_val = 0.0;  // float-valued
    std::vector<std::int64_t> shape;
};

QuantTensor quantize_per_tensor(const Tensor& w, int bits = 8);
Tensor dequantize(const QuantTensor& qt);

struct HuffmanTable {
    // code length per symbol, 0 = absent, else 1..16
    std::array<std::uint8_t, 256> lengths{};
    // canonical codewords (by length, then symbol), valid after build_codes
    std::array<std::uint16_t, 256> codes{};

    void build_codes();  // DataError on Kraft violation or length > 16
};

// Optimal prefix code over the histogram; falls back to package-merge
// when plain Huffman would exceed 16 bits.
HuffmanTable huffman_build(const std::array<std::uint64_t, 256>& freqs);

// MSB-first bit packing, zero-padded to a whole byte.
std::vector<std::uint8_t> huffman_encode(std::span<const std::uint8_t> symbols,
                                         const HuffmanTable& table, std::uint64_t& bit_count);

std::vector<std::uint8_t> huffman_decode(std::span<const std::uint8_t> payload,
                                         std::uint64_t bit_count, const HuffmanTable& table,
                                         std::size_t n_symbols);

struct TensorQuantInfo {
    std::vector<std::int64_t> dims;
    double scale = 1.0;    // float-valued
    double min_val = 0.0;  // float-valued
};

struct CompressedModel {
    ArchConfig arch;
    std::uint32_t t = 0, h = 0, w = 0;
    std::vector<TensorQuantInfo> tensors;  // canonical parameter order
    HuffmanTable table;
    std::uint64_t payload_bits = 0;
    std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> serialize(const CompressedModel& m);
CompressedModel deserialize(std::span<const std::uint8_t> bytes);

// Quantize every tensor at 8 bits in canonical order (optionally after
// applying a prune mask), entropy-code the concatenated symbols with one
// global table.
CompressedModel compress_pipeline(ParameterStore& params, const ArchConfig& arch,
                                  std::int64_t t_frames, const PruneMask* mask = nullptr);

std::pair<ArchConfig, ParameterStore> decompress(const CompressedModel& m);

}  // namespace nervpp
