// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "adfg/adapters/lora.hpp"
#include "adfg/numerics/tape.hpp"
#include "adfg/quantize/nf4.hpp"

namespace adfg::model {

struct ModelConfig {
    std::size_t vocab_size = 512;
    std::size_t d_model = 128;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t d_ff = 384;
    std::size_t max_positions = 1024;
    double rope_base = 10000.0;
    double norm_eps = 1e-5;
    bool tie_embeddings = true;
    double init_std = 0.02;

    [[nodiscard]] std::size_t head_dim() const { return d_model / n_heads; }
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

// Parameter count of a dense model with this configuration.
std::size_t parameter_count(const ModelConfig& cfg);

// Projection names inside a layer, in canonical order.
inline const std::vector<std::string>& projection_names() {
    static const std::vector<std::string> names{"q", "k", "v", "o", "gate", "up", "down"};
    return names;
}

std::string layer_weight(std::size_t layer, const std::string& leaf);

template <typename T>
using Weight = std::variant<numerics::Tensor<T>, quantize::QuantizedTensor>;

// Decoder-only transformer. Weights are addressed by name:
//   embed, layers.{i}.{attn_norm,q,k,v,o,mlp_norm,gate,up,down}, final_norm, head (untied only).
// Projection weights are [d_out × d_in] and may be stored NF4-quantized.
template <typename T>
class DecoderModel {
public:
    DecoderModel() = default;
    DecoderModel(ModelConfig config, std::vector<std::string> names, std::map<std::string, Weight<T>> weights);

    static DecoderModel init(const ModelConfig& cfg, std::uint64_t seed);

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
    [[nodiscard]] bool has(const std::string& name) const { return weights_.count(name) != 0; }
    [[nodiscard]] bool is_quantized(const std::string& name) const;
    [[nodiscard]] const Weight<T>& weight(const std::string& name) const;

    [[nodiscard]] const numerics::Tensor<T>& dense(const std::string& name) const;
    [[nodiscard]] numerics::Tensor<T>& dense(const std::string& name);
    [[nodiscard]] const quantize::QuantizedTensor& quantized(const std::string& name) const;
    // Dense value, dequantizing if needed.
    [[nodiscard]] numerics::Tensor<T> materialize(const std::string& name) const;
    void set(const std::string& name, Weight<T> w);

    // NF4-quantizes every projection matrix; embeddings and norm gains stay dense.
    void quantize_projections(std::size_t block_size = quantize::kDefaultBlockSize, bool double_quant = true,
                              std::size_t constant_block_size = quantize::kDefaultConstantBlockSize);
    [[nodiscard]] DecoderModel dequantized() const;

    // Shapes of the named projections across all layers, for adapter creation.
    [[nodiscard]] std::vector<adapters::TargetShape> target_shapes(const std::vector<std::string>& leaves) const;
    [[nodiscard]] std::size_t parameter_count() const;
    [[nodiscard]] std::string output_weight() const { return config_.tie_embeddings ? "embed" : "head"; }

    template <typename U>
    [[nodiscard]] DecoderModel<U> cast() const;

private:
    ModelConfig config_;
    std::vector<std::string> names_;
    std::map<std::string, Weight<T>> weights_;
};

// Which tape leaves receive gradients.
enum class Trainable { none, base, adapter };

// Tape variables for one forward pass.
struct Bound {
    std::map<std::string, numerics::Var> weights;
    std::map<std::string, adapters::LoraVars> lora;
};

template <typename T>
Bound bind(numerics::Tape<T>& tape, const DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter,
           Trainable trainable);

struct ForwardOptions {
    bool training = false;
    Rng* dropout_rng = nullptr;
};

// Positions restart at zero at every segment boundary.
std::vector<std::int32_t> segment_positions(std::span<const std::int32_t> segments, std::size_t length);

// Logits [T × vocab]. Empty segments means one segment spanning the sequence.
template <typename T>
numerics::Var forward(numerics::Tape<T>& tape, const DecoderModel<T>& model, const Bound& bound,
                      const adapters::LoraAdapter<T>* adapter, std::span<const std::int32_t> tokens,
                      std::span<const std::int32_t> segments = {}, ForwardOptions options = {});

// Evaluation-mode logits without gradients.
template <typename T>
numerics::Tensor<T> logits(const DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter,
                           std::span<const std::int32_t> tokens, std::span<const std::int32_t> segments = {});

// Copy of the model with every adapter pair folded into its dense base weight.
template <typename T>
DecoderModel<T> merge_adapter(const DecoderModel<T>& model, const adapters::LoraAdapter<T>& adapter);

// Incremental decoding state with a key/value cache; adapters are folded into
// effective weights on construction.
template <typename T>
class InferenceSession {
public:
    InferenceSession(const DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter);

    // Appends one token and returns the next-token logits.
    std::vector<T> step(std::int32_t token);
    [[nodiscard]] std::size_t length() const noexcept { return length_; }
    void reset();

private:
    struct Layer {
        numerics::Tensor<T> attn_norm, q, k, v, o, mlp_norm, gate, up, down;
        std::vector<T> keys, values;
    };
    ModelConfig config_;
    numerics::Tensor<T> embed_;
    numerics::Tensor<T> final_norm_;
    numerics::Tensor<T> head_;
    std::vector<Layer> layers_;
    std::size_t length_ = 0;
};

struct GenerateOptions {
    std::size_t max_new = 64;
    // Zero or negative selects greedy decoding.
    double temperature = 0.0;
    std::uint64_t seed = 0;
    // Stop token; negative disables.
    std::int32_t eos = -1;
};

// Returns only the newly generated ids (including the stop token if produced).
template <typename T>
std::vector<std::int32_t> generate(const DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter,
                                   std::span<const std::int32_t> prompt, const GenerateOptions& options);

// Index of the next token under the given strategy; ties go to the lowest id.
std::int32_t sample_token(std::span<const double> logits, double temperature, Rng& rng);

}  // namespace adfg::model
