// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

// Dense matrix kernels. Every output element is reduced over the inner index in
// ascending order starting from zero and only then added to the destination, so
// the serial reference and the OpenMP variant are bitwise identical for any
// thread count.
namespace adfg::kernels {

struct GemmDims {
    std::size_t m = 0;  // output rows
    std::size_t k = 0;  // inner extent
    std::size_t n = 0;  // output cols
};

namespace reference {

// c[m×n] (+)= a[m×k] · b[k×n]
template <typename T>
void gemm_nn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

// c[m×n] (+)= a[m×k] · b[n×k]ᵀ
template <typename T>
void gemm_nt(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

// c[m×n] (+)= a[k×m]ᵀ · b[k×n]
template <typename T>
void gemm_tn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

}  // namespace reference

namespace parallel {

template <typename T>
void gemm_nn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

template <typename T>
void gemm_nt(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

template <typename T>
void gemm_tn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate);

}  // namespace parallel

// Entry points used by the rest of the library.
template <typename T>
void gemm_nn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
    parallel::gemm_nn<T>(d, a, b, c, accumulate);
}

template <typename T>
void gemm_nt(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
    parallel::gemm_nt<T>(d, a, b, c, accumulate);
}

template <typename T>
void gemm_tn(GemmDims d, std::span<const T> a, std::span<const T> b, std::span<T> c, bool accumulate) {
    parallel::gemm_tn<T>(d, a, b, c, accumulate);
}

// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace adfg::kernels
