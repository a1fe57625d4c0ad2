// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/kernels/gemm.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace adfg::kernels {

namespace {

// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelThreshold = std::size_t{1} << 15;

constexpr std::size_t kRowBlock = 4;

template <typename T>
inline void store_row(std::span<T> c, std::size_t offset, const T* acc, std::size_t n, bool accumulate) {
    T* out = c.data() + offset;
    if (accumulate) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j] += acc[j];
        }
    } else {
        std::copy(acc, acc + n, out);
    }
}

// Rows [row_begin, row_end) of c = a·b where a is addressed through (row_stride, col_stride)
// so that the same routine serves a and aᵀ.
template <typename T>
void nn_rows(GemmDims d, const T* a, std::size_t a_row_stride, std::size_t a_col_stride, const T* b, std::span<T> c,
             bool accumulate, std::size_t row_begin, std::size_t row_end, std::vector<T>& scratch) {
    const std::size_t n = d.n;
    scratch.assign(kRowBlock * n, T{0});
    std::size_t i = row_begin;
    for (; i + kRowBlock <= row_end; i += kRowBlock) {
        std::fill(scratch.begin(), scratch.end(), T{0});
        T* acc0 = scratch.data();
        T* acc1 = acc0 + n;
        T* acc2 = acc1 + n;
        T* acc3 = acc2 + n;
        for (std::size_t p = 0; p < d.k; ++p) {
            const T* brow = b + p * n;
            const T a0 = a[(i + 0) * a_row_stride + p * a_col_stride];
            const T a1 = a[(i + 1) * a_row_stride + p * a_col_stride];
            const T a2 = a[(i + 2) * a_row_stride + p * a_col_stride];
            const T a3 = a[(i + 3) * a_row_stride + p * a_col_stride];
            for (std::size_t j = 0; j < n; ++j) {
                const T bv = brow[j];
                acc0[j] += a0 * bv;
                acc1[j] += a1 * bv;
                acc2[j] += a2 * bv;
                acc3[j] += a3 * bv;
            }
        }
        for (std::size_t r = 0; r < kRowBlock; ++r) {
            store_row(c, (i + r) * n, scratch.data() + r * n, n, accumulate);
        }
    }
    for (; i < row_end; ++i) {
        T* acc = scratch.data();
        std::fill(acc, acc + n, T{0});
        for (std::size_t p = 0; p < d.k; ++p) {
            const T* brow = b + p * n;
            const T av = a[i * a_row_stride + p * a_col_stride];
            for (std::size_t j = 0; j < n; ++j) {
                acc[j] += av * brow[j];
            }
        }
        store_row(c, i * n, acc, n, accumulate);
    }
}

template <typename T>
void nn_driver(GemmDims d, const T* a, std::size_t a_row_stride, std::size_t a_col_stride, const T* b, std::span<T> c,
               bool accumulate) {
    const bool go_parallel = d.m * d.k * d.n >= kParallelThreshold && d.m >= 2 * kRowBlock;
    if (!go_parallel) {
        std::vector<T> scratch;
        nn_rows(d, a, a_row_stride, a_col_stride, b, c, accumulate, 0, d.m, scratch);
        return;
    }
    const std::size_t blocks = (d.m + kRowBlock - 1) / kRowBlock;
#pragma omp parallel
    {
        std::vector<T> scratch;
#pragma omp for schedule(static)
        for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(blocks); ++blk) {
            const std::size_t begin = static_cast<std::size_t>(blk) * kRowBlock;
            const std::size_t end = std::min(d.m, begin + kRowBlock);
            nn_rows(d, a, a_row_stride, a_col_stride, b, c, accumulate, begin, end, scratch);
        }
    }
}

}  // namespace

namespace reference {

template <typename T>
void gemm_nn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
    for (std::size_t i = 0; i < d.m; ++i) {
        for (std::size_t j = 0; j < d.n; ++j) {
            T sum{0};
            for (std::size_t p = 0; p < d.k; ++p) {
                sum += a[i * d.k + p] * b[p * d.n + j];
            }
            c[i * d.n + j] = accumulate ? c[i * d.n + j] + sum : sum;
        }
    }
}

template <typename T>
void gemm_nt(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
    for (std::size_t i = 0; i < d.m; ++i) {
        for (std::size_t j = 0; j < d.n; ++j) {
            T sum{0};
            for (std::size_t p = 0; p < d.k; ++p) {
                sum += a[i * d.k + p] * b[j * d.k + p];
            }
            c[i * d.n + j] = accumulate ? c[i * d.n + j] + sum : sum;
        }
    }
}

template <typename T>
void gemm_tn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
    for (std::size_t i = 0; i < d.m; ++i) {
        for (std::size_t j = 0; j < d.n; ++j) {
            T sum{0};
            for (std::size_t p = 0; p < d.k; ++p) {
                sum += a[p * d.m + i] * b[p * d.n + j];
            }
            c[i * d.n + j] = accumulate ? c[i * d.n + j] + sum : sum;
        }
    }
}

template void gemm_nn<float>(GemmDims, std::span<const float>, std::span<const float>, std::span<float>, bool);
template void gemm_nn<double>(GemmDims, std::span<const double>, std::span<const double>, std::span<double>, bool);
template void gemm_nt<float>(GemmDims, std::span<const float>, std::span<const float>, std::span<float>, bool);
template void gemm_nt<double>(GemmDims, std::span<const double>, std::span<const double>, std::span<double>, bool);
template void gemm_tn<float>(GemmDims, std::span<const float>, std::span<const float>, std::span<float>, bool);
template void gemm_tn<double>(GemmDims, std::span<const double>, std::span<const double>, std::span<double>, bool);

}  // namespace reference

namespace parallel {

template <typename T>
void gemm_nn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
    nn_driver(d, a.data(), d.k, 1, b.data(), c, accumulate);
}

template <typename T>
void gemm_nt(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
    // bᵀ is materialized once so the inner loop runs over contiguous output columns.
    std::vector<T> bt(d.k * d.n);
    for (std::size_t j = 0; j < d.n; ++j) {
        for (std::size_t p = 0; p < d.k; ++p) {
            bt[p * d.n + j] = b[j * d.k + p];
        }
    }
    nn_driver(d, a.data(), d.k, 1, bt.data(), c, accumulate);
}

template <typename T>
void gemm_tn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
    nn_driver(d, a.data(), 1, d.m, b.data(), c, accumulate);
}

template void gemm_nn<float>(GemmDims, std::span<const float>, std::span<const float>, std::span<float>, bool);
template void gemm_nn<double>(GemmDims, std::span<const double>, std::span<const double>, std::span<double>, bool);
template void gemm_nt<float>(GemmDims, std::span<const float>, std::span<const float>, std::span<float>, bool);
template void gemm_nt<double>(GemmDims, std::span<const double>, std::span<const double>, std::span<double>, bool);
template void gemm_tn<float>(GemmDims, std::span<const float>, std::span<const float>, std::span<float>, bool);
template void gemm_tn<double>(GemmDims, std::span<const double>, std::span<const double>, std::span<double>, bool);

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(std::max(1, n));
#else
    (void)n;
#endif
}

}  // namespace adfg::kernels
