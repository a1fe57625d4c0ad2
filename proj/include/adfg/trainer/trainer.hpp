// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "adfg/adapters/lora.hpp"
#include "adfg/datapipe/pipeline.hpp"
#include "adfg/model/decoder.hpp"

namespace adfg::trainer {

enum class Mode { adapt, sft };
std::string to_string(Mode m);
Mode mode_from_string(std::string_view s);

enum class Preset {
    adapt,     // language adaptation
    chat,      // dialogue fine-tuning
    instruct,  // instruction tuning
};
Preset preset_from_string(std::string_view s);

struct TrainConfig {
    Mode mode = Mode::adapt;
    double lr_peak = 2e-4;
    double warmup_ratio = 0.03;
    double clip_norm = 0.3;
    double weight_decay = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t total_steps = 25000;
    std::size_t accum_steps = 1;
    std::size_t per_device_batch = 8;
    std::size_t n_devices = 12;
    std::size_t max_length = 1024;
    std::uint64_t seed = 0;
    // Blocks attention across packed examples; off is the ablation.
    bool segment_masking = true;
    // 0 writes only the final checkpoint.
    std::size_t checkpoint_every = 0;

    static TrainConfig preset(Preset p);
    [[nodiscard]] std::size_t effective_batch() const { return per_device_batch * n_devices * accum_steps; }
    [[nodiscard]] datapipe::BatchPlan plan() const { return {per_device_batch, n_devices, accum_steps}; }
    [[nodiscard]] std::size_t warmup_steps() const;
    // Throws InvalidArgument.
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    // Keys absent from j keep the values of base. Unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
    static TrainConfig from_json(const nlohmann::json& j);
    bool operator==(const TrainConfig&) const = default;
};

// Linear warmup to lr_peak over warmup_steps, then cosine decay to zero at total_steps.
double lr_at(std::size_t step, const TrainConfig& cfg);

template <typename T>
struct OptimizerState {
    std::vector<numerics::Tensor<T>> m;
    std::vector<numerics::Tensor<T>> v;
    std::size_t step = 0;
};

struct ParamGroup {
    bool decay = true;
};

// One AdamW update with bias correction and decoupled decay:
//   p ← p − lr·m̂/(√v̂ + eps) − lr·wd·p
// State buffers are allocated on first use. Throws DimensionError on mismatch.
template <typename T>
void adamw_step(const std::vector<numerics::Tensor<T>*>& params, const std::vector<numerics::Tensor<T>>& grads,
                OptimizerState<T>& state, double lr, const TrainConfig& cfg,
                const std::vector<ParamGroup>& groups = {});

// Global L2 norm over all grads; when it exceeds clip_norm every grad is
// scaled by clip_norm/norm. Returns the norm before clipping.
template <typename T>
double clip_gradients(std::vector<numerics::Tensor<T>>& grads, double clip_norm);

struct StepMetrics {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    std::size_t effective_batch = 0;
    std::size_t tokens = 0;

    [[nodiscard]] nlohmann::json to_json() const;
};

struct TrainIo {
    // Empty disables checkpoint files.
    std::string checkpoint_dir;
    std::ostream* metrics = nullptr;  // JSONL, one line per optimizer step
    std::ostream* log = nullptr;      // human progress lines
    std::size_t log_every = 50;
};

struct TrainResult {
    std::vector<StepMetrics> metrics;
    std::vector<std::string> checkpoints;
};

// With an adapter only its matrices train and the base stays bitwise frozen;
// without one every base weight trains and none may be quantized.
// A non-finite loss or gradient throws NumericError before the update, so the
// model and the checkpoints on disk hold the last good step.
template <typename T>
TrainResult train(model::DecoderModel<T>& model, adapters::LoraAdapter<T>* adapter,
                  const std::vector<datapipe::PackedSequence>& data, const TrainConfig& cfg, const TrainIo& io = {});

// exp of the mean next-token cross-entropy over every target in data.
template <typename T>
double evaluate_perplexity(const model::DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter,
                           const std::vector<datapipe::PackedSequence>& data, bool segment_masking = true);

// Checkpoint file name for a step; the final one is "final.adfg".
std::string checkpoint_name(std::size_t step, bool final);

}  // namespace adfg::trainer
