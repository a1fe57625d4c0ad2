// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "adfg/numerics/tape.hpp"

// Differentiable operations. Each records its result and backward rule on the
// tape and raises NumericError if the forward value is not finite.
namespace adfg::numerics {

// [m×k]·[k×n]
template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);

// x[m×k] · w[n×k]ᵀ, the projection convention used for every weight matrix.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w);

// Elementwise with trailing-dimension broadcasting: b's shape must equal a's
// shape or be a suffix of it.
template <typename T>
Var add(Tape<T>& tape, Var a, Var b);
template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);

// x·sigmoid(x)
template <typename T>
Var silu(Tape<T>& tape, Var x);

// Sum of all entries, shape {1}.
template <typename T>
Var sum(Tape<T>& tape, Var x);

// Rows of table[V×d] selected by ids, result [T×d].
template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const std::int32_t> ids);

// Concatenation along the last axis; all inputs share their leading extents.
template <typename T>
Var concat_last(Tape<T>& tape, const std::vector<Var>& parts);

// y = x / sqrt(mean(x²) + eps) · g over each last-axis slice.
template <typename T>
Var rms_norm(Tape<T>& tape, Var x, Var gain, double eps);

// Mean over unmasked rows of −log softmax(logits)[target], shape {1}.
template <typename T>
Var softmax_xent(Tape<T>& tape, Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask);

// Rotary embedding on x[T × n_heads·head_dim]; pair (2i, 2i+1) of each head is
// rotated by positions[t] · base^(−2i/head_dim).
template <typename T>
Var rope(Tape<T>& tape, Var x, std::span<const std::int32_t> positions, std::size_t n_heads, double base);

// Multi-head scaled dot-product attention where query t sees keys s ≤ t that
// share its segment id. Segments must be contiguous runs; an empty span means
// one segment. q, k, v and the result are [T × n_heads·head_dim].
template <typename T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t n_heads, std::span<const std::int32_t> segments);

// Non-differentiable helpers shared by the ops and the inference path.
template <typename T>
void rope_inplace(std::span<T> row, std::int32_t position, std::size_t n_heads, double base, bool inverse);

template <typename T>
double softmax_xent_value(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                          std::span<const std::uint8_t> mask);

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* op);

}  // namespace adfg::numerics
