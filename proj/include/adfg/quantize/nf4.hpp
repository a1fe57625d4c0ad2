// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "adfg/numerics/tensor.hpp"

namespace adfg::quantize {

inline constexpr std::size_t kDefaultBlockSize = 64;
inline constexpr std::size_t kDefaultConstantBlockSize = 256;

// 16 NormalFloat levels in [-1, 1], strictly increasing, containing -1, 0 and +1.
// Eight levels are negative and seven positive.
struct Nf4Codebook {
    std::array<float, 16> levels{};

    [[nodiscard]] std::uint8_t zero_index() const;
    // Largest spacing between adjacent levels.
    [[nodiscard]] double max_gap() const;
    // Index of the nearest level to v (ties go to the lower index).
    [[nodiscard]] std::uint8_t nearest(float v) const;
};

// Standard-normal quantiles at evenly spaced probabilities between 1 - δ and 1/2
// on each side (δ = (1/30 + 1/32)/2), normalized so the extremes are ±1.
std::array<double, 16> nf4_levels_exact();
Nf4Codebook build_nf4_codebook();
const Nf4Codebook& nf4_codebook();

// Inverse CDF of the standard normal distribution, accurate to a few ulps.
double normal_quantile(double p);

// Per-block 8-bit codes for the absmax constants. Each constant block stores one
// float32 scale (the block maximum); a constant decodes as scale · code/255.
struct DoubleQuantized {
    std::vector<std::uint8_t> codes;
    std::vector<float> scales;
    std::size_t block_size = kDefaultConstantBlockSize;

    [[nodiscard]] std::size_t size() const noexcept { return codes.size(); }
    [[nodiscard]] float value(std::size_t i) const;

    bool operator==(const DoubleQuantized&) const = default;
};

DoubleQuantized double_quantize_constants(std::span<const float> absmax,
                                          std::size_t block_size = kDefaultConstantBlockSize);
std::vector<float> dequantize_constants(const DoubleQuantized& dq);

struct QuantizedTensor {
    numerics::Shape shape;
    // Two codes per byte, the even element in the low nibble.
    std::vector<std::uint8_t> packed_codes;
    std::size_t block_size = kDefaultBlockSize;
    std::variant<std::vector<float>, DoubleQuantized> absmax;

    [[nodiscard]] std::size_t numel() const { return numerics::shape_numel(shape); }
    [[nodiscard]] std::size_t block_count() const { return (numel() + block_size - 1) / block_size; }
    [[nodiscard]] bool double_quantized() const { return std::holds_alternative<DoubleQuantized>(absmax); }
    [[nodiscard]] std::uint8_t code(std::size_t i) const;
    // Scale actually used for decoding block b.
    [[nodiscard]] float block_scale(std::size_t b) const;
    [[nodiscard]] std::vector<float> block_scales() const;

    // Structural consistency; throws FormatError describing the first problem.
    void validate() const;

    bool operator==(const QuantizedTensor&) const = default;
};

// Exact storage accounting: bits / params.
struct BitsPerParam {
    std::uint64_t bits = 0;
    std::uint64_t params = 0;

    [[nodiscard]] double value() const { return static_cast<double>(bits) / static_cast<double>(params); }
};

BitsPerParam quantized_bits_per_param(const QuantizedTensor& q);
// Same accounting from sizes alone, for planning.
BitsPerParam quantized_bits_per_param(std::size_t numel, std::size_t block_size, bool double_quant,
                                      std::size_t constant_block_size = kDefaultConstantBlockSize);

namespace reference {
// Serial quantizer that scans every level per element.
QuantizedTensor quantize_nf4(std::span<const float> x, numerics::Shape shape, std::size_t block_size,
                             bool double_quant, std::size_t constant_block_size = kDefaultConstantBlockSize);
std::vector<float> dequantize(const QuantizedTensor& q);
}  // namespace reference

namespace parallel {
QuantizedTensor quantize_nf4(std::span<const float> x, numerics::Shape shape, std::size_t block_size,
                             bool double_quant, std::size_t constant_block_size = kDefaultConstantBlockSize);
std::vector<float> dequantize(const QuantizedTensor& q);
}  // namespace parallel

template <typename T>
QuantizedTensor quantize_nf4(const numerics::Tensor<T>& x, std::size_t block_size = kDefaultBlockSize,
                             bool double_quant = false, std::size_t constant_block_size = kDefaultConstantBlockSize);

template <typename T>
numerics::Tensor<T> dequantize(const QuantizedTensor& q);

}  // namespace adfg::quantize
