// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "adfg/datapipe/pipeline.hpp"
#include "adfg/rng.hpp"

namespace adfg::testing {

inline datapipe::TokenizedExample example_of(std::size_t n, std::int32_t fill) {
    datapipe::TokenizedExample e;
    e.ids.assign(n, fill);
    e.ids.front() = datapipe::ByteTokenizer::kBos;
    e.ids.back() = datapipe::ByteTokenizer::kEos;
    e.mask.assign(n, 1);
    e.mask.front() = 0;
    return e;
}

inline std::vector<datapipe::TokenizedExample> exponential_examples(std::size_t count, double mean,
                                                                    std::size_t max_len, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<datapipe::TokenizedExample> out;
    for (std::size_t i = 0; i < count; ++i) {
        const double u = rng.uniform();
        auto n = static_cast<std::size_t>(std::ceil(-mean * std::log1p(-u)));
        n = std::clamp<std::size_t>(n, 2, max_len);
        auto e = example_of(n, static_cast<std::int32_t>(i % 256));
        for (std::size_t t = 1; t + 1 < n; ++t) {
            e.ids[t] = static_cast<std::int32_t>(rng.below(256));
        }
        out.push_back(std::move(e));
    }
    return out;
}

// Recovers each example from a pack by its segment runs.
inline std::vector<datapipe::TokenizedExample> unpack(const datapipe::PackedSequence& p) {
    std::vector<datapipe::TokenizedExample> out;
    for (std::size_t t = 0; t < p.length(); ++t) {
        if (p.segments[t] == 0) {
            continue;
        }
        if (t == 0 || p.segments[t] != p.segments[t - 1]) {
            out.emplace_back();
        }
        out.back().ids.push_back(p.ids[t]);
        out.back().mask.push_back(p.mask[t]);
    }
    return out;
}

}  // namespace adfg::testing
