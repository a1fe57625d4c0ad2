// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "adfg/numerics/tape.hpp"
#include "adfg/quantize/nf4.hpp"
#include "adfg/rng.hpp"

namespace adfg::adapters {

struct LoraConfig {
    std::size_t r = 64;
    double alpha = 16.0;
    double dropout = 0.1;
    // Projection names within a layer; "q", "k", "v", "o", "gate", "up", "down".
    std::vector<std::string> targets{"q", "k", "v", "o"};
    double init_std = 0.02;

    [[nodiscard]] double scaling() const { return alpha / static_cast<double>(r); }
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    // Missing keys keep their defaults; the result is validated.
    static LoraConfig from_json(const nlohmann::json& j);
    bool operator==(const LoraConfig&) const = default;
};

// Weight matrix W[d_out × d_in] that an adapter attaches to.
struct TargetShape {
    std::string name;
    std::size_t d_out = 0;
    std::size_t d_in = 0;
};

// ΔW = (alpha/r)·B·A
template <typename T>
struct LoraPair {
    numerics::Tensor<T> a;  // [r × d_in]
    numerics::Tensor<T> b;  // [d_out × r]
};

template <typename T>
struct LoraAdapter {
    LoraConfig config;
    // Full weight names in attachment order.
    std::vector<std::string> order;
    std::map<std::string, LoraPair<T>> pairs;

    [[nodiscard]] bool targets(const std::string& weight) const { return pairs.count(weight) != 0; }
    [[nodiscard]] const LoraPair<T>& at(const std::string& weight) const;
    [[nodiscard]] LoraPair<T>& at(const std::string& weight);
    [[nodiscard]] std::size_t parameter_count() const;
};

// A ~ N(0, init_std²) from a stream derived per target, B = 0.
template <typename T>
LoraAdapter<T> init_adapter(const LoraConfig& cfg, const std::vector<TargetShape>& shapes, std::uint64_t seed);

// Tape variables of one attached pair.
struct LoraVars {
    numerics::Var a;
    numerics::Var b;
};

// Dropout mask source for the adapter input; null means evaluation mode.
struct DropoutSource {
    Rng* rng = nullptr;
    double p = 0.0;

    [[nodiscard]] bool active() const { return rng != nullptr && p > 0.0; }
};

// y = x·Wᵀ + s·(drop(x)·Aᵀ)·Bᵀ; the base path never sees dropout.
template <typename T>
numerics::Var adapted_linear(numerics::Tape<T>& tape, numerics::Var x, numerics::Var w, const LoraVars* lora,
                             T scaling, DropoutSource dropout);

// Value-level form on a [rows × d_in] input. A quantized base is dequantized and
// held constant; gradients (if any) reach only A and B.
template <typename T>
numerics::Tensor<T> adapted_forward(const numerics::Tensor<T>& x,
                                    const std::variant<numerics::Tensor<T>, quantize::QuantizedTensor>& base,
                                    const LoraPair<T>& pair, const LoraConfig& cfg, bool training, Rng* rng);

// W + s·B·A. Not idempotent: merging twice adds ΔW twice.
template <typename T>
numerics::Tensor<T> merge(const LoraPair<T>& pair, const LoraConfig& cfg, const numerics::Tensor<T>& base);
// Always throws: quantized weights must be dequantized explicitly before merging.
template <typename T>
numerics::Tensor<T> merge(const LoraPair<T>& pair, const LoraConfig& cfg, const quantize::QuantizedTensor& base);

template <typename T>
numerics::Tensor<T> delta_weight(const LoraPair<T>& pair, const LoraConfig& cfg);

struct ParamReport {
    std::size_t trainable = 0;
    std::size_t frozen = 0;

    [[nodiscard]] double ratio() const {
        const std::size_t total = trainable + frozen;
        return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total);
    }
};

// With an adapter only A and B count as trainable; the base is frozen.
template <typename T>
ParamReport trainable_param_report(std::size_t base_params, const LoraAdapter<T>* adapter);

}  // namespace adfg::adapters
