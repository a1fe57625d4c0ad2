// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/quantize/nf4.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "adfg/error.hpp"

namespace adfg::quantize {

namespace {

constexpr std::size_t kParallelThreshold = 1 << 14;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Acklam's rational approximation for p ≤ 1/2, relative error about 1e-9.
double acklam(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double low = 0.02425;
    if (p < low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

std::uint8_t nearest_scan(const std::array<float, 16>& levels, float v) {
    std::uint8_t best = 0;
    float best_dist = std::fabs(v - levels[0]);
    for (std::uint8_t i = 1; i < 16; ++i) {
        const float dist = std::fabs(v - levels[i]);
        if (dist < best_dist) {
            best = i;
            best_dist = dist;
        }
    }
    return best;
}

float block_absmax(std::span<const float> x) {
    float a = 0.0f;
    for (const float v : x) {
        a = std::max(a, std::fabs(v));
    }
    return a;
}

void check_input(std::span<const float> x, const numerics::Shape& shape, std::size_t block_size,
                 std::size_t constant_block_size) {
    if (x.empty()) {
        throw InvalidArgument("quantize_nf4: empty tensor");
    }
    if (numerics::shape_numel(shape) != x.size()) {
        throw DimensionError("quantize_nf4: shape " + numerics::shape_string(shape) + " does not hold " +
                             std::to_string(x.size()) + " values");
    }
    if (block_size == 0 || constant_block_size == 0) {
        throw InvalidArgument("quantize_nf4: block sizes must be positive");
    }
    for (const float v : x) {
        if (!std::isfinite(v)) {
            throw NumericError("quantize_nf4: non-finite input");
        }
    }
}

std::vector<std::uint8_t> pack_nibbles(const std::vector<std::uint8_t>& codes, bool parallel) {
    const std::size_t n = codes.size();
    std::vector<std::uint8_t> packed((n + 1) / 2, 0);
    const auto bytes = static_cast<std::ptrdiff_t>(packed.size());
#pragma omp parallel for schedule(static) if (parallel && n > kParallelThreshold)
    for (std::ptrdiff_t j = 0; j < bytes; ++j) {
        const auto i = static_cast<std::size_t>(2 * j);
        const std::uint8_t lo = codes[i];
        const std::uint8_t hi = i + 1 < n ? codes[i + 1] : 0;
        packed[static_cast<std::size_t>(j)] = static_cast<std::uint8_t>(lo | (hi << 4));
    }
    return packed;
}

template <bool Parallel>
QuantizedTensor quantize_impl(std::span<const float> x, numerics::Shape shape, std::size_t block_size,
                              bool double_quant, std::size_t constant_block_size) {
    check_input(x, shape, block_size, constant_block_size);
    const Nf4Codebook& book = nf4_codebook();
    const std::uint8_t zero = book.zero_index();
    const std::size_t n = x.size();
    const std::size_t blocks = (n + block_size - 1) / block_size;
    std::vector<std::uint8_t> codes(n);
    std::vector<float> absmax(blocks);

    const auto nblocks = static_cast<std::ptrdiff_t>(blocks);
#pragma omp parallel for schedule(static) if (Parallel && n > kParallelThreshold)
    for (std::ptrdiff_t bi = 0; bi < nblocks; ++bi) {
        const auto b = static_cast<std::size_t>(bi);
        const std::size_t begin = b * block_size;
        const std::size_t end = std::min(n, begin + block_size);
        const float a = block_absmax(x.subspan(begin, end - begin));
        absmax[b] = a;
        for (std::size_t i = begin; i < end; ++i) {
            if (a == 0.0f) {
                codes[i] = zero;
            } else if constexpr (Parallel) {
                codes[i] = book.nearest(x[i] / a);
            } else {
                codes[i] = nearest_scan(book.levels, x[i] / a);
            }
        }
    }

    QuantizedTensor q;
    q.shape = std::move(shape);
    q.packed_codes = pack_nibbles(codes, Parallel);
    q.block_size = block_size;
    if (double_quant) {
        q.absmax = double_quantize_constants(absmax, constant_block_size);
    } else {
        q.absmax = std::move(absmax);
    }
    return q;
}

template <bool Parallel>
std::vector<float> dequantize_impl(const QuantizedTensor& q) {
    q.validate();
    const Nf4Codebook& book = nf4_codebook();
    const std::size_t n = q.numel();
    const std::vector<float> scales = q.block_scales();
    std::vector<float> out(n);
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (Parallel && n > kParallelThreshold)
    for (std::ptrdiff_t ii = 0; ii < count; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        out[i] = book.levels[q.code(i)] * scales[i / q.block_size];
    }
    return out;
}

}  // namespace

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw InvalidArgument("normal_quantile: probability must lie in (0, 1)");
    }
    // Refine in the lower tail, where the CDF keeps full relative precision;
    // 1 - p is exact for p ≥ 1/2.
    if (p > 0.5) {
        return -normal_quantile(1.0 - p);
    }
    double x = acklam(p);
    // Halley refinement against the erfc-based CDF.
    for (int it = 0; it < 2; ++it) {
        const double e = normal_cdf(x) - p;
        const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

std::array<double, 16> nf4_levels_exact() {
    const double top = ((1.0 - 1.0 / 30.0) + (1.0 - 1.0 / 32.0)) / 2.0;
    std::array<double, 16> raw{};
    // Eight negative quantiles on probabilities linspace(top, 0.5, 9) without the endpoint.
    for (int i = 0; i < 8; ++i) {
        const double p = top + (0.5 - top) * i / 8.0;
        raw[static_cast<std::size_t>(i)] = -normal_quantile(p);
    }
    raw[8] = 0.0;
    // Seven positive quantiles on linspace(top, 0.5, 8) without the endpoint, ascending.
    for (int i = 0; i < 7; ++i) {
        const double p = top + (0.5 - top) * i / 7.0;
        raw[static_cast<std::size_t>(15 - i)] = normal_quantile(p);
    }
    const double scale = std::max(-raw[0], raw[15]);
    for (auto& v : raw) {
        v /= scale;
    }
    raw[0] = -1.0;
    raw[15] = 1.0;
    return raw;
}

Nf4Codebook build_nf4_codebook() {
    Nf4Codebook book;
    const auto exact = nf4_levels_exact();
    for (std::size_t i = 0; i < 16; ++i) {
        book.levels[i] = static_cast<float>(exact[i]);
    }
    return book;
}

const Nf4Codebook& nf4_codebook() {
    static const Nf4Codebook book = build_nf4_codebook();
    return book;
}

std::uint8_t Nf4Codebook::zero_index() const {
    for (std::uint8_t i = 0; i < 16; ++i) {
        if (levels[i] == 0.0f) {
            return i;
        }
    }
    throw InvalidArgument("codebook has no zero level");
}

double Nf4Codebook::max_gap() const {
    double gap = 0.0;
    for (std::size_t i = 1; i < 16; ++i) {
        gap = std::max(gap, static_cast<double>(levels[i]) - static_cast<double>(levels[i - 1]));
    }
    return gap;
}

std::uint8_t Nf4Codebook::nearest(float v) const {
    // Rounded distance is monotone in the level on each side of v, so only the two
    // bracketing levels can win. hi counts the levels <= v (an upper_bound without
    // branches, which matters on random data).
    unsigned hi = 0;
    for (const float l : levels) {
        hi += l <= v ? 1U : 0U;
    }
    if (hi == 0) {
        return 0;
    }
    if (hi == 16) {
        return 15;
    }
    const unsigned lo = hi - 1;
    return static_cast<std::uint8_t>(std::fabs(v - levels[hi]) < std::fabs(v - levels[lo]) ? hi : lo);
}

float DoubleQuantized::value(std::size_t i) const {
    return scales[i / block_size] * (static_cast<float>(codes[i]) / 255.0f);
}

DoubleQuantized double_quantize_constants(std::span<const float> absmax, std::size_t block_size) {
    if (block_size == 0) {
        throw InvalidArgument("double_quantize_constants: block size must be positive");
    }
    DoubleQuantized dq;
    dq.block_size = block_size;
    dq.codes.resize(absmax.size());
    dq.scales.resize((absmax.size() + block_size - 1) / block_size);
    for (std::size_t b = 0; b < dq.scales.size(); ++b) {
        const std::size_t begin = b * block_size;
        const std::size_t end = std::min(absmax.size(), begin + block_size);
        float top = 0.0f;
        for (std::size_t i = begin; i < end; ++i) {
            if (!(absmax[i] >= 0.0f) || !std::isfinite(absmax[i])) {
                throw InvalidArgument("double_quantize_constants: constants must be finite and non-negative");
            }
            top = std::max(top, absmax[i]);
        }
        dq.scales[b] = top;
        for (std::size_t i = begin; i < end; ++i) {
            const double r = top == 0.0f ? 0.0 : static_cast<double>(absmax[i]) / static_cast<double>(top);
            dq.codes[i] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(r * 255.0), 0, 255));
        }
    }
    return dq;
}

std::vector<float> dequantize_constants(const DoubleQuantized& dq) {
    std::vector<float> out(dq.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = dq.value(i);
    }
    return out;
}

std::uint8_t QuantizedTensor::code(std::size_t i) const {
    const std::uint8_t byte = packed_codes[i / 2];
    return (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
}

float QuantizedTensor::block_scale(std::size_t b) const {
    if (const auto* raw = std::get_if<std::vector<float>>(&absmax)) {
        return (*raw)[b];
    }
    return std::get<DoubleQuantized>(absmax).value(b);
}

std::vector<float> QuantizedTensor::block_scales() const {
    if (const auto* raw = std::get_if<std::vector<float>>(&absmax)) {
        return *raw;
    }
    return dequantize_constants(std::get<DoubleQuantized>(absmax));
}

void QuantizedTensor::validate() const {
    if (shape.empty() || std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end()) {
        throw FormatError("quantized tensor has an invalid shape " + numerics::shape_string(shape));
    }
    if (block_size == 0) {
        throw FormatError("quantized tensor has zero block size");
    }
    const std::size_t n = numel();
    if (packed_codes.size() != (n + 1) / 2) {
        throw FormatError("quantized tensor holds " + std::to_string(packed_codes.size()) +
                          " code bytes, expected " + std::to_string((n + 1) / 2));
    }
    if (n % 2 == 1 && (packed_codes.back() >> 4) != 0) {
        throw FormatError("quantized tensor has a nonzero padding nibble");
    }
    const std::size_t blocks = block_count();
    if (const auto* raw = std::get_if<std::vector<float>>(&absmax)) {
        if (raw->size() != blocks) {
            throw FormatError("quantized tensor holds " + std::to_string(raw->size()) + " constants, expected " +
                              std::to_string(blocks));
        }
    } else {
        const auto& dq = std::get<DoubleQuantized>(absmax);
        if (dq.block_size == 0 || dq.codes.size() != blocks ||
            dq.scales.size() != (blocks + dq.block_size - 1) / dq.block_size) {
            throw FormatError("double-quantized constants are inconsistent with the block count");
        }
    }
    const std::uint8_t zero = nf4_codebook().zero_index();
    for (std::size_t b = 0; b < blocks; ++b) {
        const float a = block_scale(b);
        if (!std::isfinite(a) || a < 0.0f) {
            throw FormatError("quantized tensor block " + std::to_string(b) + " has an invalid constant");
        }
        if (a == 0.0f && !double_quantized()) {
            const std::size_t end = std::min(n, (b + 1) * block_size);
            for (std::size_t i = b * block_size; i < end; ++i) {
                if (code(i) != zero) {
                    throw FormatError("quantized tensor block " + std::to_string(b) +
                                      " has zero absmax but nonzero codes");
                }
            }
        }
    }
}

BitsPerParam quantized_bits_per_param(std::size_t numel, std::size_t block_size, bool double_quant,
                                      std::size_t constant_block_size) {
    if (numel == 0 || block_size == 0 || constant_block_size == 0) {
        throw InvalidArgument("quantized_bits_per_param: sizes must be positive");
    }
    const std::uint64_t blocks = (numel + block_size - 1) / block_size;
    std::uint64_t bits = 4ULL * numel;
    if (double_quant) {
        const std::uint64_t cblocks = (blocks + constant_block_size - 1) / constant_block_size;
        bits += 8ULL * blocks + 32ULL * cblocks;
    } else {
        bits += 32ULL * blocks;
    }
    return BitsPerParam{bits, numel};
}

BitsPerParam quantized_bits_per_param(const QuantizedTensor& q) {
    const std::size_t cbs =
        q.double_quantized() ? std::get<DoubleQuantized>(q.absmax).block_size : kDefaultConstantBlockSize;
    return quantized_bits_per_param(q.numel(), q.block_size, q.double_quantized(), cbs);
}

namespace reference {
QuantizedTensor quantize_nf4(std::span<const float> x, numerics::Shape shape, std::size_t block_size,
                             bool double_quant, std::size_t constant_block_size) {
    return quantize_impl<false>(x, std::move(shape), block_size, double_quant, constant_block_size);
}
std::vector<float> dequantize(const QuantizedTensor& q) { return dequantize_impl<false>(q); }
}  // namespace reference

namespace parallel {
QuantizedTensor quantize_nf4(std::span<const float> x, numerics::Shape shape, std::size_t block_size,
                             bool double_quant, std::size_t constant_block_size) {
    return quantize_impl<true>(x, std::move(shape), block_size, double_quant, constant_block_size);
}
std::vector<float> dequantize(const QuantizedTensor& q) { return dequantize_impl<true>(q); }
}  // namespace parallel

template <typename T>
QuantizedTensor quantize_nf4(const numerics::Tensor<T>& x, std::size_t block_size, bool double_quant,
                             std::size_t constant_block_size) {
    if constexpr (std::is_same_v<T, float>) {
        return parallel::quantize_nf4(x.data(), x.shape(), block_size, double_quant, constant_block_size);
    } else {
        const auto f = x.template cast<float>();
        return parallel::quantize_nf4(f.data(), f.shape(), block_size, double_quant, constant_block_size);
    }
}

template <typename T>
numerics::Tensor<T> dequantize(const QuantizedTensor& q) {
    numerics::Tensor<float> f(q.shape, parallel::dequantize(q));
    if constexpr (std::is_same_v<T, float>) {
        return f;
    } else {
        return f.template cast<T>();
    }
}

template QuantizedTensor quantize_nf4<float>(const numerics::Tensor<float>&, std::size_t, bool, std::size_t);
template QuantizedTensor quantize_nf4<double>(const numerics::Tensor<double>&, std::size_t, bool, std::size_t);
template numerics::Tensor<float> dequantize<float>(const QuantizedTensor&);
template numerics::Tensor<double> dequantize<double>(const QuantizedTensor&);

}  // namespace adfg::quantize
