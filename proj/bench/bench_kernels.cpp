// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "adfg/kernels/gemm.hpp"
#include "adfg/quantize/nf4.hpp"
#include "adfg/rng.hpp"

namespace {

using adfg::kernels::GemmDims;

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
    adfg::Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) {
        x = static_cast<float>(rng.normal(0.0, 1.0));
    }
    return v;
}

template <bool Parallel>
void BM_GemmNT(benchmark::State& state) {
    const auto s = static_cast<std::size_t>(state.range(0));
    const GemmDims d{s, s, s};
    const auto a = random_vector(s * s, 1);
    const auto b = random_vector(s * s, 2);
    std::vector<float> c(s * s);
    for (auto _ : state) {
        if constexpr (Parallel) {
            adfg::kernels::parallel::gemm_nt<float>(d, a, b, c, false);
        } else {
            adfg::kernels::reference::gemm_nt<float>(d, a, b, c, false);
        }
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * s * s * s));
    state.counters["threads"] = adfg::kernels::max_threads();
}

template <bool Parallel>
void BM_QuantizeNf4(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto x = random_vector(n, 3);
    for (auto _ : state) {
        auto q = Parallel ? adfg::quantize::parallel::quantize_nf4(x, {n}, 64, true)
                          : adfg::quantize::reference::quantize_nf4(x, {n}, 64, true);
        benchmark::DoNotOptimize(q.packed_codes.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

template <bool Parallel>
void BM_DequantizeNf4(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto q = adfg::quantize::parallel::quantize_nf4(random_vector(n, 4), {n}, 64, true);
    for (auto _ : state) {
        auto x = Parallel ? adfg::quantize::parallel::dequantize(q) : adfg::quantize::reference::dequantize(q);
        benchmark::DoNotOptimize(x.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

}  // namespace

BENCHMARK(BM_GemmNT<false>)->Name("gemm_nt/reference")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_GemmNT<true>)->Name("gemm_nt/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_QuantizeNf4<false>)->Name("quantize_nf4/reference")->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_QuantizeNf4<true>)->Name("quantize_nf4/parallel")->Arg(1 << 16)->Arg(1 << 20);
BENCHMARK(BM_DequantizeNf4<false>)->Name("dequantize/reference")->Arg(1 << 20);
BENCHMARK(BM_DequantizeNf4<true>)->Name("dequantize/parallel")->Arg(1 << 20);

BENCHMARK_MAIN();
