// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "adfg/kernels/gemm.hpp"
#include "adfg/quantize/nf4.hpp"
#include "adfg/rng.hpp"
#include "support/nf4_oracle.hpp"

using namespace adfg;
using namespace adfg::quantize;

namespace {

std::vector<float> normal_samples(std::size_t n, std::uint64_t seed, double stddev = 1.0) {
    Rng rng(seed);
    std::vector<float> x(n);
    for (auto& v : x) {
        v = static_cast<float>(rng.normal(0.0, stddev));
    }
    return x;
}

}  // namespace

TEST_CASE("codebook matches the bisection oracle and frozen values") {
    const auto oracle = testing::nf4_oracle_levels();
    const auto exact = nf4_levels_exact();
    const auto& book = nf4_codebook();
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(std::abs(static_cast<long double>(exact[i]) - oracle[i]) <= 1e-13L);
        CHECK(std::abs(static_cast<double>(book.levels[i]) - static_cast<double>(oracle[i])) <= 1e-6);
        CHECK(std::abs(exact[i] - testing::kFrozenNf4Levels[i]) <= 1e-14);
    }
    CHECK(book.levels.front() == -1.0f);
    CHECK(book.levels.back() == 1.0f);
    CHECK(book.levels[book.zero_index()] == 0.0f);
    int neg = 0;
    int pos = 0;
    for (std::size_t i = 0; i < 16; ++i) {
        neg += book.levels[i] < 0.0f;
        pos += book.levels[i] > 0.0f;
        if (i > 0) {
            CHECK(book.levels[i - 1] < book.levels[i]);
        }
    }
    CHECK(neg == 8);
    CHECK(pos == 7);
    CHECK(book.max_gap() == doctest::Approx(testing::kFrozenNf4MaxGap).epsilon(1e-6));
}

TEST_CASE("normal_quantile agrees with bisection") {
    for (const double p : {1e-12, 1e-6, 0.01, 0.02425, 0.3, 0.5, 0.7, 0.97, 0.999999}) {
        const long double ref = testing::bisect_quantile(static_cast<long double>(p));
        CHECK(std::abs(static_cast<long double>(normal_quantile(p)) - ref) <= 1e-12L * std::max(1.0L, std::abs(ref)));
    }
    CHECK_THROWS_AS(normal_quantile(0.0), InvalidArgument);
    CHECK_THROWS_AS(normal_quantile(1.0), InvalidArgument);
}

TEST_CASE("nearest level breaks ties toward the lower index") {
    const auto& book = nf4_codebook();
    for (std::size_t i = 0; i + 1 < 16; ++i) {
        const float lo = book.levels[i];
        const float hi = book.levels[i + 1];
        const float mid = lo + (hi - lo) / 2.0f;
        // Confirm the midpoint is an exact float tie before asserting the rule.
        if (std::fabs(mid - lo) == std::fabs(mid - hi)) {
            CHECK(book.nearest(mid) == i);
        }
        CHECK(book.nearest(lo) == i);
        CHECK(book.nearest(hi) == i + 1);
    }
    Rng rng(5);
    for (int t = 0; t < 100000; ++t) {
        const auto v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
        std::uint8_t best = 0;
        for (std::uint8_t i = 1; i < 16; ++i) {
            if (std::fabs(v - book.levels[i]) < std::fabs(v - book.levels[best])) {
                best = i;
            }
        }
        REQUIRE(book.nearest(v) == best);
    }
}

TEST_CASE("all-zero block quantizes to the zero level with zero absmax") {
    const std::vector<float> x(100, 0.0f);
    const auto q = parallel::quantize_nf4(x, {100}, 64, false);
    const auto zero = nf4_codebook().zero_index();
    for (std::size_t i = 0; i < 100; ++i) {
        CHECK(q.code(i) == zero);
    }
    CHECK(q.block_scales() == std::vector<float>{0.0f, 0.0f});
    CHECK(parallel::dequantize(q) == x);
}

TEST_CASE("codebook multiples are fixed points") {
    const auto& book = nf4_codebook();
    for (const float a : {1.0f, 2.5f, 0.037f, 1234.5f}) {
        std::vector<float> x(16);
        for (std::size_t i = 0; i < 16; ++i) {
            x[i] = book.levels[i] * a;
        }
        const auto q = reference::quantize_nf4(x, {16}, 16, false);
        CHECK(q.block_scale(0) == a);
        for (std::size_t i = 0; i < 16; ++i) {
            CHECK(q.code(i) == i);
        }
        CHECK(reference::dequantize(q) == x);
    }
}

TEST_CASE("round-trip error bound and comparison with uniform int4") {
    const std::size_t n = 1'000'000;
    const auto x = normal_samples(n, 17);
    const auto q = parallel::quantize_nf4(x, {n}, 64, false);
    const auto xh = parallel::dequantize(q);
    const double gap = nf4_codebook().max_gap();
    std::size_t violations = 0;
    double nf4_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double err = std::abs(static_cast<double>(x[i]) - static_cast<double>(xh[i]));
        if (err > static_cast<double>(q.block_scale(i / 64)) * gap / 2.0) {
            ++violations;
        }
        nf4_sq += err * err;
    }
    CHECK(violations == 0);
    const auto int4 = testing::uniform_int4_roundtrip(x, 64);
    double int4_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double err = static_cast<double>(x[i]) - static_cast<double>(int4[i]);
        int4_sq += err * err;
    }
    CHECK(nf4_sq / n < int4_sq / n);
}

TEST_CASE("quantize of dequantize is the identity on quantized tensors") {
    const auto x = normal_samples(5000, 3, 0.7);
    for (const bool dq : {false, true}) {
        const auto q = parallel::quantize_nf4(x, {50, 100}, 64, dq, 16);
        const auto again = parallel::quantize_nf4(parallel::dequantize(q), q.shape, 64, dq, 16);
        CHECK(again == q);
    }
}

TEST_CASE("scale equivariance") {
    const auto x = normal_samples(4096, 11);
    const auto q = reference::quantize_nf4(x, {4096}, 64, false);
    for (const float c : {0.25f, 4.0f, 1024.0f, 3.0f, 0.1f}) {
        std::vector<float> cx(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            cx[i] = c * x[i];
        }
        const auto qc = reference::quantize_nf4(cx, {4096}, 64, false);
        CHECK(qc.packed_codes == q.packed_codes);
        for (std::size_t b = 0; b < q.block_count(); ++b) {
            CHECK(qc.block_scale(b) == doctest::Approx(c * q.block_scale(b)).epsilon(1e-6));
        }
    }
}

TEST_CASE("double quantization of constants") {
    SUBCASE("two-value block uses both endpoints") {
        const std::vector<float> a{0.0f, 2.55f};
        const auto dq = double_quantize_constants(a, 256);
        CHECK(dq.codes == std::vector<std::uint8_t>{0, 255});
        CHECK(dequantize_constants(dq) == a);
    }
    SUBCASE("constant vector round-trips exactly") {
        const std::vector<float> a(600, 0.8125f);
        const auto dq = double_quantize_constants(a, 256);
        CHECK(dq.scales.size() == 3);
        for (const auto c : dq.codes) {
            CHECK(c == 255);
        }
        CHECK(dequantize_constants(dq) == a);
    }
    SUBCASE("error within 1/255 of the block range and non-negative") {
        Rng rng(9);
        std::vector<float> a(1000);
        for (auto& v : a) {
            v = static_cast<float>(rng.uniform() * 3.0);
        }
        const auto dq = double_quantize_constants(a, 256);
        const auto back = dequantize_constants(dq);
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::size_t b = i / 256;
            float lo = a[b * 256];
            float hi = lo;
            for (std::size_t j = b * 256; j < std::min(a.size(), (b + 1) * 256); ++j) {
                lo = std::min(lo, a[j]);
                hi = std::max(hi, a[j]);
            }
            CHECK(back[i] >= 0.0f);
            CHECK(std::abs(back[i] - a[i]) <= (hi - lo) / 255.0f);
        }
    }
    SUBCASE("negative constants are rejected") {
        const std::vector<float> a{1.0f, -0.5f};
        CHECK_THROWS_AS(double_quantize_constants(a, 256), InvalidArgument);
    }
}

TEST_CASE("storage accounting") {
    CHECK(quantized_bits_per_param(64 * 1000, 64, false).value() == 4.5);
    CHECK(quantized_bits_per_param(10, 1, false).value() == 36.0);
    const auto dq = quantized_bits_per_param(64 * 256 * 3, 64, true, 256);
    // 4 + 8/64 + 32/(64·256) = (4·16384 + 2048 + 32) / 16384
    CHECK(dq.bits * 16384 == dq.params * (4 * 16384 + 2048 + 32));
    CHECK(dq.value() - 4.0 == doctest::Approx(0.126953125));

    const auto x = normal_samples(64 * 256, 1);
    const auto q = parallel::quantize_nf4(x, {64 * 256}, 64, true, 256);
    CHECK(quantized_bits_per_param(q).bits == dq.bits / 3);
}

TEST_CASE("serial and parallel kernels agree bitwise") {
    const auto x = normal_samples(100'003, 21);
    const auto ref = reference::quantize_nf4(x, {100'003}, 64, true, 256);
    const auto ref_out = reference::dequantize(ref);
    const int saved = kernels::max_threads();
    for (int threads = 1; threads <= 3; ++threads) {
        kernels::set_threads(threads);
        const auto par = parallel::quantize_nf4(x, {100'003}, 64, true, 256);
        CHECK(par == ref);
        CHECK(parallel::dequantize(par) == ref_out);
    }
    kernels::set_threads(saved);
}

TEST_CASE("invalid inputs and corrupt tensors") {
    CHECK_THROWS_AS(parallel::quantize_nf4(std::vector<float>{}, {1}, 64, false), InvalidArgument);
    CHECK_THROWS_AS(parallel::quantize_nf4(std::vector<float>{1.0f, NAN}, {2}, 64, false), NumericError);
    CHECK_THROWS_AS(parallel::quantize_nf4(std::vector<float>{1.0f}, {2}, 64, false), DimensionError);

    const std::vector<float> x{0.5f, -1.0f, 0.25f};
    auto q = parallel::quantize_nf4(x, {3}, 2, false);
    q.validate();
    auto padded = q;
    padded.packed_codes.back() |= 0x10;
    CHECK_THROWS_AS(parallel::dequantize(padded), FormatError);
    auto short_constants = q;
    std::get<std::vector<float>>(short_constants.absmax).pop_back();
    CHECK_THROWS_AS(parallel::dequantize(short_constants), FormatError);
    auto truncated = q;
    truncated.packed_codes.pop_back();
    CHECK_THROWS_AS(parallel::dequantize(truncated), FormatError);
}

TEST_CASE("tensor entry points") {
    Rng rng(2);
    const auto w = numerics::Tensor<double>::randn({8, 24}, rng, 1.0);
    const auto q = quantize_nf4(w);
    const auto back = dequantize<double>(q);
    CHECK(back.shape() == w.shape());
    CHECK(max_abs_diff(back, w) <= 0.16 * 4.0);
}
