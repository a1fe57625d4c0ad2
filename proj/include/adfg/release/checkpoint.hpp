// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <variant>
#include <vector>

#include "adfg/adapters/lora.hpp"
#include "adfg/model/decoder.hpp"
#include "adfg/release/container.hpp"

namespace adfg::release {

// Model containers: meta {"kind": "model", "config": ...}; one blob per weight
// name in model order. A quantized weight stores its packed codes under its
// own name (attrs carry shape and block sizes) plus "<name>@absmax", or
// "<name>@absmax_codes" and "<name>@absmax_scales" when double-quantized.
template <typename T>
Container model_to_container(const model::DecoderModel<T>& m);
template <typename T>
model::DecoderModel<T> model_from_container(const Container& c);

// Hex SHA-256 of the model's canonical container.
template <typename T>
std::string model_fingerprint(const model::DecoderModel<T>& m);

// Adapter containers: meta {"kind": "adapter", "lora": ..., "base_fingerprint": ...};
// blobs "<weight>.lora_a" and "<weight>.lora_b" in attachment order.
template <typename T>
Container adapter_to_container(const adapters::LoraAdapter<T>& a, const std::string& base_fingerprint = {});
template <typename T>
adapters::LoraAdapter<T> adapter_from_container(const Container& c);
std::string adapter_base_fingerprint(const Container& c);

// Weight diff d = finetuned − base, stored as float32 per tensor. A tensor is
// stored in "delta" mode when float(double(base) + double(d)) reproduces every
// finetuned value bitwise; otherwise it falls back to "replace" mode holding
// the finetuned values directly.
struct DiffSummary {
    std::size_t tensors = 0;
    std::size_t replaced = 0;
};

// Throws InvalidArgument on name/shape mismatch or quantized weights.
Container diff(const model::DecoderModel<float>& base, const model::DecoderModel<float>& finetuned,
               DiffSummary* summary = nullptr);
// Throws FingerprintError unless the diff was made against this base.
model::DecoderModel<float> apply_diff(const model::DecoderModel<float>& base, const Container& diff);
std::string diff_base_fingerprint(const Container& diff);

struct AdapterStep {
    adapters::LoraAdapter<float> adapter;
    std::string base_fingerprint;  // empty skips the check
};

struct DiffStep {
    Container diff;
};

using ChainStep = std::variant<AdapterStep, DiffStep>;

// Left-to-right application; each step is checked against the running model.
model::DecoderModel<float> apply_chain(const model::DecoderModel<float>& base, const std::vector<ChainStep>& steps);

// Loads an adapter or diff container as a chain step.
ChainStep load_chain_step(const Container& c);

}  // namespace adfg::release
