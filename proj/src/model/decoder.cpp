// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/model/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "adfg/numerics/ops.hpp"

namespace adfg::model {

using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

void ModelConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_positions == 0) {
        throw InvalidArgument("model config: extents must be positive");
    }
    if (d_model % n_heads != 0) {
        throw InvalidArgument("model config: d_model must be divisible by n_heads");
    }
    if (head_dim() % 2 != 0) {
        throw InvalidArgument("model config: head dimension must be even for rotary embeddings");
    }
    if (!(rope_base > 0.0) || !(norm_eps > 0.0) || !(init_std > 0.0)) {
        throw InvalidArgument("model config: rope_base, norm_eps and init_std must be positive");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return nlohmann::json{{"vocab_size", vocab_size}, {"d_model", d_model},
                          {"n_layers", n_layers},     {"n_heads", n_heads},
                          {"d_ff", d_ff},             {"max_positions", max_positions},
                          {"rope_base", rope_base},   {"norm_eps", norm_eps},
                          {"tie_embeddings", tie_embeddings}, {"init_std", init_std}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.max_positions = j.value("max_positions", c.max_positions);
    c.rope_base = j.value("rope_base", c.rope_base);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
    c.init_std = j.value("init_std", c.init_std);
    c.validate();
    return c;
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t d = c.d_model;
    const std::size_t per_layer = 2 * d + 4 * d * d + 3 * d * c.d_ff;
    return c.vocab_size * d * (c.tie_embeddings ? 1 : 2) + c.n_layers * per_layer + d;
}

std::string layer_weight(std::size_t layer, const std::string& leaf) {
    return "layers." + std::to_string(layer) + "." + leaf;
}

namespace {

bool is_projection(const std::string& name) {
    const auto dot = name.rfind('.');
    if (name.rfind("layers.", 0) != 0 || dot == std::string::npos) {
        return false;
    }
    const auto leaf = name.substr(dot + 1);
    const auto& p = projection_names();
    return std::find(p.begin(), p.end(), leaf) != p.end();
}

numerics::Shape expected_shape(const ModelConfig& c, const std::string& name) {
    const std::size_t d = c.d_model;
    if (name == "embed" || name == "head") {
        return {c.vocab_size, d};
    }
    if (name == "final_norm") {
        return {d};
    }
    const auto leaf = name.substr(name.rfind('.') + 1);
    if (leaf == "attn_norm" || leaf == "mlp_norm") {
        return {d};
    }
    if (leaf == "gate" || leaf == "up") {
        return {c.d_ff, d};
    }
    if (leaf == "down") {
        return {d, c.d_ff};
    }
    return {d, d};
}

std::vector<std::string> canonical_names(const ModelConfig& c) {
    std::vector<std::string> names{"embed"};
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        for (const char* leaf : {"attn_norm", "q", "k", "v", "o", "mlp_norm", "gate", "up", "down"}) {
            names.push_back(layer_weight(l, leaf));
        }
    }
    names.emplace_back("final_norm");
    if (!c.tie_embeddings) {
        names.emplace_back("head");
    }
    return names;
}

template <typename T>
numerics::Shape weight_shape(const Weight<T>& w) {
    if (const auto* t = std::get_if<Tensor<T>>(&w)) {
        return t->shape();
    }
    return std::get<quantize::QuantizedTensor>(w).shape;
}

}  // namespace

template <typename T>
DecoderModel<T>::DecoderModel(ModelConfig config, std::vector<std::string> names,
                              std::map<std::string, Weight<T>> weights)
    : config_(config), names_(std::move(names)), weights_(std::move(weights)) {
    config_.validate();
    if (names_ != canonical_names(config_)) {
        throw FormatError("model weights do not match the configured layout");
    }
    for (const auto& n : names_) {
        const auto it = weights_.find(n);
        if (it == weights_.end()) {
            throw FormatError("model is missing weight '" + n + "'");
        }
        if (weight_shape(it->second) != expected_shape(config_, n)) {
            throw DimensionError("weight '" + n + "' has shape " + numerics::shape_string(weight_shape(it->second)) +
                                 ", expected " + numerics::shape_string(expected_shape(config_, n)));
        }
        if (std::holds_alternative<quantize::QuantizedTensor>(it->second) && !is_projection(n)) {
            throw FormatError("only projection weights may be quantized, not '" + n + "'");
        }
    }
    if (weights_.size() != names_.size()) {
        throw FormatError("model has unexpected extra weights");
    }
}

template <typename T>
DecoderModel<T> DecoderModel<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    auto names = canonical_names(cfg);
    std::map<std::string, Weight<T>> weights;
    for (const auto& n : names) {
        const auto shape = expected_shape(cfg, n);
        if (shape.size() == 1) {
            weights.emplace(n, Tensor<T>::full(shape, T{1}));
        } else {
            Rng rng = Rng::derive(seed, fnv1a(n));
            weights.emplace(n, Tensor<T>::randn(shape, rng, cfg.init_std));
        }
    }
    return DecoderModel(cfg, std::move(names), std::move(weights));
}

template <typename T>
bool DecoderModel<T>::is_quantized(const std::string& name) const {
    return std::holds_alternative<quantize::QuantizedTensor>(weight(name));
}

template <typename T>
const Weight<T>& DecoderModel<T>::weight(const std::string& name) const {
    const auto it = weights_.find(name);
    if (it == weights_.end()) {
        throw InvalidArgument("model has no weight '" + name + "'");
    }
    return it->second;
}

template <typename T>
const Tensor<T>& DecoderModel<T>::dense(const std::string& name) const {
    const auto* t = std::get_if<Tensor<T>>(&weight(name));
    if (t == nullptr) {
        throw InvalidArgument("weight '" + name + "' is quantized");
    }
    return *t;
}

template <typename T>
Tensor<T>& DecoderModel<T>::dense(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).dense(name));
}

template <typename T>
const quantize::QuantizedTensor& DecoderModel<T>::quantized(const std::string& name) const {
    const auto* q = std::get_if<quantize::QuantizedTensor>(&weight(name));
    if (q == nullptr) {
        throw InvalidArgument("weight '" + name + "' is not quantized");
    }
    return *q;
}

template <typename T>
Tensor<T> DecoderModel<T>::materialize(const std::string& name) const {
    const auto& w = weight(name);
    if (const auto* t = std::get_if<Tensor<T>>(&w)) {
        return *t;
    }
    return quantize::dequantize<T>(std::get<quantize::QuantizedTensor>(w));
}

template <typename T>
void DecoderModel<T>::set(const std::string& name, Weight<T> w) {
    const auto it = weights_.find(name);
    if (it == weights_.end()) {
        throw InvalidArgument("model has no weight '" + name + "'");
    }
    if (weight_shape(w) != expected_shape(config_, name)) {
        throw DimensionError("weight '" + name + "' replacement has shape " + numerics::shape_string(weight_shape(w)));
    }
    if (std::holds_alternative<quantize::QuantizedTensor>(w) && !is_projection(name)) {
        throw InvalidArgument("only projection weights may be quantized, not '" + name + "'");
    }
    it->second = std::move(w);
}

template <typename T>
void DecoderModel<T>::quantize_projections(std::size_t block_size, bool double_quant, std::size_t constant_block_size) {
    for (const auto& n : names_) {
        if (is_projection(n) && !is_quantized(n)) {
            weights_[n] = quantize::quantize_nf4(dense(n), block_size, double_quant, constant_block_size);
        }
    }
}

template <typename T>
DecoderModel<T> DecoderModel<T>::dequantized() const {
    DecoderModel out = *this;
    for (const auto& n : names_) {
        out.weights_[n] = materialize(n);
    }
    return out;
}

template <typename T>
std::vector<adapters::TargetShape> DecoderModel<T>::target_shapes(const std::vector<std::string>& leaves) const {
    std::vector<adapters::TargetShape> out;
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        for (const auto& leaf : projection_names()) {
            if (std::find(leaves.begin(), leaves.end(), leaf) == leaves.end()) {
                continue;
            }
            const auto name = layer_weight(l, leaf);
            const auto shape = expected_shape(config_, name);
            out.push_back({name, shape[0], shape[1]});
        }
    }
    return out;
}

template <typename T>
std::size_t DecoderModel<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, w] : weights_) {
        n += numerics::shape_numel(weight_shape(w));
    }
    return n;
}

template <typename T>
template <typename U>
DecoderModel<U> DecoderModel<T>::cast() const {
    std::map<std::string, Weight<U>> weights;
    for (const auto& [name, w] : weights_) {
        if (const auto* t = std::get_if<Tensor<T>>(&w)) {
            weights.emplace(name, t->template cast<U>());
        } else {
            weights.emplace(name, std::get<quantize::QuantizedTensor>(w));
        }
    }
    return DecoderModel<U>(config_, names_, std::move(weights));
}

template <typename T>
Bound bind(Tape<T>& tape, const DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter, Trainable trainable) {
    if (trainable == Trainable::adapter && adapter == nullptr) {
        throw InvalidArgument("bind: adapter training requested without an adapter");
    }
    Bound bound;
    for (const auto& n : model.names()) {
        const bool rg = trainable == Trainable::base;
        if (rg && model.is_quantized(n)) {
            throw InvalidArgument("bind: quantized weight '" + n + "' cannot be trained");
        }
        bound.weights.emplace(n, tape.leaf(model.materialize(n), rg));
    }
    if (adapter != nullptr) {
        const bool rg = trainable == Trainable::adapter;
        for (const auto& n : adapter->order) {
            if (!model.has(n)) {
                throw InvalidArgument("adapter targets unknown weight '" + n + "'");
            }
            const auto& pair = adapter->at(n);
            bound.lora.emplace(n, adapters::LoraVars{tape.leaf(pair.a, rg), tape.leaf(pair.b, rg)});
        }
    }
    return bound;
}

std::vector<std::int32_t> segment_positions(std::span<const std::int32_t> segments, std::size_t length) {
    if (!segments.empty() && segments.size() != length) {
        throw DimensionError("segment ids must match the sequence length");
    }
    std::vector<std::int32_t> pos(length);
    std::int32_t p = 0;
    for (std::size_t t = 0; t < length; ++t) {
        if (t > 0 && !segments.empty() && segments[t] != segments[t - 1]) {
            p = 0;
        }
        pos[t] = p++;
    }
    return pos;
}

namespace {

void check_tokens(const ModelConfig& c, std::span<const std::int32_t> tokens) {
    if (tokens.empty()) {
        throw InvalidArgument("forward: empty token sequence");
    }
    if (tokens.size() > c.max_positions) {
        throw InvalidArgument("forward: sequence of " + std::to_string(tokens.size()) + " exceeds max_positions " +
                              std::to_string(c.max_positions));
    }
    for (const auto t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
            throw InvalidArgument("forward: token id " + std::to_string(t) + " outside vocabulary");
        }
    }
}

}  // namespace

template <typename T>
Var forward(Tape<T>& tape, const DecoderModel<T>& model, const Bound& bound, const adapters::LoraAdapter<T>* adapter,
            std::span<const std::int32_t> tokens, std::span<const std::int32_t> segments, ForwardOptions options) {
    const ModelConfig& c = model.config();
    check_tokens(c, tokens);
    const auto positions = segment_positions(segments, tokens.size());
    const auto w = [&](const std::string& n) { return bound.weights.at(n); };
    const T scaling = adapter != nullptr ? static_cast<T>(adapter->config.scaling()) : T{0};
    const adapters::DropoutSource drop{options.training ? options.dropout_rng : nullptr,
                                       adapter != nullptr ? adapter->config.dropout : 0.0};
    const auto proj = [&](Var x, const std::string& n) {
        const auto it = bound.lora.find(n);
        return adapters::adapted_linear(tape, x, w(n), it == bound.lora.end() ? nullptr : &it->second, scaling, drop);
    };

    Var h = numerics::embedding(tape, w("embed"), tokens);
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto name = [l](const char* leaf) { return layer_weight(l, leaf); };
        const Var x = numerics::rms_norm(tape, h, w(name("attn_norm")), c.norm_eps);
        const Var q = numerics::rope(tape, proj(x, name("q")), positions, c.n_heads, c.rope_base);
        const Var k = numerics::rope(tape, proj(x, name("k")), positions, c.n_heads, c.rope_base);
        const Var v = proj(x, name("v"));
        const Var a = numerics::causal_attention(tape, q, k, v, c.n_heads, segments);
        h = numerics::add(tape, h, proj(a, name("o")));
        const Var m = numerics::rms_norm(tape, h, w(name("mlp_norm")), c.norm_eps);
        const Var gated = numerics::mul(tape, numerics::silu(tape, proj(m, name("gate"))), proj(m, name("up")));
        h = numerics::add(tape, h, proj(gated, name("down")));
    }
    h = numerics::rms_norm(tape, h, w("final_norm"), c.norm_eps);
    return numerics::linear(tape, h, w(model.output_weight()));
}

template <typename T>
Tensor<T> logits(const DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter,
                 std::span<const std::int32_t> tokens, std::span<const std::int32_t> segments) {
    Tape<T> tape;
    const Bound bound = bind(tape, model, adapter, Trainable::none);
    return tape.value(forward(tape, model, bound, adapter, tokens, segments));
}

template <typename T>
DecoderModel<T> merge_adapter(const DecoderModel<T>& model, const adapters::LoraAdapter<T>& adapter) {
    DecoderModel<T> out = model;
    for (const auto& n : adapter.order) {
        if (model.is_quantized(n)) {
            throw InvalidArgument("merge: weight '" + n + "' is quantized; dequantize the model first");
        }
        out.set(n, adapters::merge(adapter.at(n), adapter.config, model.dense(n)));
    }
    return out;
}

namespace {

template <typename T>
void rms_norm_row(std::span<const T> x, const Tensor<T>& g, double eps, std::span<T> out) {
    double ms = 0.0;
    for (const T v : x) {
        ms += static_cast<double>(v) * static_cast<double>(v);
    }
    ms /= static_cast<double>(x.size());
    const T inv = static_cast<T>(1.0 / std::sqrt(ms + eps));
    for (std::size_t j = 0; j < x.size(); ++j) {
        out[j] = x[j] * inv * g[j];
    }
}

// out = W·x with W [rows × cols]
template <typename T>
void matvec(const Tensor<T>& w, std::span<const T> x, std::span<T> out) {
    const std::size_t cols = w.cols();
    for (std::size_t r = 0; r < w.dim(0); ++r) {
        const T* row = w.data().data() + r * cols;
        T acc{0};
        for (std::size_t j = 0; j < cols; ++j) {
            acc += row[j] * x[j];
        }
        out[r] = acc;
    }
}

template <typename T>
Tensor<T> effective(const DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter, const std::string& n) {
    Tensor<T> w = model.materialize(n);
    if (adapter != nullptr && adapter->targets(n)) {
        return adapters::merge(adapter->at(n), adapter->config, w);
    }
    return w;
}

}  // namespace

template <typename T>
InferenceSession<T>::InferenceSession(const DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter)
    : config_(model.config()),
      embed_(model.materialize("embed")),
      final_norm_(model.materialize("final_norm")),
      head_(model.materialize(model.output_weight())) {
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const auto e = [&](const char* leaf) { return effective(model, adapter, layer_weight(l, leaf)); };
        layers_.push_back(Layer{e("attn_norm"), e("q"), e("k"), e("v"), e("o"), e("mlp_norm"), e("gate"), e("up"),
                                e("down"), {}, {}});
    }
}

template <typename T>
void InferenceSession<T>::reset() {
    for (auto& layer : layers_) {
        layer.keys.clear();
        layer.values.clear();
    }
    length_ = 0;
}

template <typename T>
std::vector<T> InferenceSession<T>::step(std::int32_t token) {
    const ModelConfig& c = config_;
    if (length_ >= c.max_positions) {
        throw InvalidArgument("generate: context reached max_positions");
    }
    if (token < 0 || static_cast<std::size_t>(token) >= c.vocab_size) {
        throw InvalidArgument("generate: token id " + std::to_string(token) + " outside vocabulary");
    }
    const std::size_t d = c.d_model;
    const std::size_t dh = c.head_dim();
    const auto pos = static_cast<std::int32_t>(length_);
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<T> h(embed_.row(static_cast<std::size_t>(token)).begin(), embed_.row(static_cast<std::size_t>(token)).end());
    std::vector<T> x(d), q(d), k(d), v(d), att(d), out(d), gate(c.d_ff), up(c.d_ff);
    std::vector<T> scores(length_ + 1);
    for (auto& layer : layers_) {
        rms_norm_row<T>(h, layer.attn_norm, c.norm_eps, x);
        matvec<T>(layer.q, x, q);
        matvec<T>(layer.k, x, k);
        matvec<T>(layer.v, x, v);
        numerics::rope_inplace<T>(q, pos, c.n_heads, c.rope_base, false);
        numerics::rope_inplace<T>(k, pos, c.n_heads, c.rope_base, false);
        layer.keys.insert(layer.keys.end(), k.begin(), k.end());
        layer.values.insert(layer.values.end(), v.begin(), v.end());
        const std::size_t n = length_ + 1;
        for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
            const std::size_t col = hd * dh;
            T peak = -std::numeric_limits<T>::infinity();
            for (std::size_t s = 0; s < n; ++s) {
                T dot{0};
                for (std::size_t j = 0; j < dh; ++j) {
                    dot += q[col + j] * layer.keys[s * d + col + j];
                }
                scores[s] = dot * inv_sqrt;
                peak = std::max(peak, scores[s]);
            }
            double z = 0.0;
            for (std::size_t s = 0; s < n; ++s) {
                scores[s] = static_cast<T>(std::exp(static_cast<double>(scores[s] - peak)));
                z += static_cast<double>(scores[s]);
            }
            const T inv_z = static_cast<T>(1.0 / z);
            for (std::size_t j = 0; j < dh; ++j) {
                T acc{0};
                for (std::size_t s = 0; s < n; ++s) {
                    acc += scores[s] * inv_z * layer.values[s * d + col + j];
                }
                att[col + j] = acc;
            }
        }
        matvec<T>(layer.o, att, out);
        for (std::size_t j = 0; j < d; ++j) {
            h[j] += out[j];
        }
        rms_norm_row<T>(h, layer.mlp_norm, c.norm_eps, x);
        matvec<T>(layer.gate, x, gate);
        matvec<T>(layer.up, x, up);
        for (std::size_t j = 0; j < c.d_ff; ++j) {
            const T g = gate[j];
            gate[j] = g / (T{1} + std::exp(-g)) * up[j];
        }
        matvec<T>(layer.down, gate, out);
        for (std::size_t j = 0; j < d; ++j) {
            h[j] += out[j];
        }
    }
    rms_norm_row<T>(h, final_norm_, c.norm_eps, x);
    std::vector<T> result(c.vocab_size);
    matvec<T>(head_, x, result);
    ++length_;
    return result;
}

std::int32_t sample_token(std::span<const double> logits, double temperature, Rng& rng) {
    if (logits.empty()) {
        throw InvalidArgument("sample_token: empty logits");
    }
    const auto best = static_cast<std::int32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (!(temperature > 0.0)) {
        return best;
    }
    const double peak = logits[static_cast<std::size_t>(best)];
    std::vector<double> w(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        w[i] = std::exp((logits[i] - peak) / temperature);
        total += w[i];
    }
    const double u = rng.uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (u < acc) {
            return static_cast<std::int32_t>(i);
        }
    }
    return best;
}

template <typename T>
std::vector<std::int32_t> generate(const DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter,
                                   std::span<const std::int32_t> prompt, const GenerateOptions& options) {
    if (prompt.empty()) {
        throw InvalidArgument("generate: prompt must not be empty");
    }
    if (prompt.size() > model.config().max_positions) {
        throw InvalidArgument("generate: prompt exceeds max_positions");
    }
    InferenceSession<T> session(model, adapter);
    std::vector<T> last;
    for (const auto t : prompt) {
        last = session.step(t);
    }
    Rng rng(options.seed);
    std::vector<std::int32_t> out;
    std::vector<double> scores(last.size());
    while (out.size() < options.max_new) {
        std::transform(last.begin(), last.end(), scores.begin(), [](T v) { return static_cast<double>(v); });
        const std::int32_t next = sample_token(scores, options.temperature, rng);
        out.push_back(next);
        if (next == options.eos || session.length() >= model.config().max_positions) {
            break;
        }
        last = session.step(next);
    }
    return out;
}

#define ADFG_INSTANTIATE_MODEL(T)                                                                                  \
    template class DecoderModel<T>;                                                                                \
    template Bound bind<T>(Tape<T>&, const DecoderModel<T>&, const adapters::LoraAdapter<T>*, Trainable);         \
    template Var forward<T>(Tape<T>&, const DecoderModel<T>&, const Bound&, const adapters::LoraAdapter<T>*,       \
                            std::span<const std::int32_t>, std::span<const std::int32_t>, ForwardOptions);         \
    template Tensor<T> logits<T>(const DecoderModel<T>&, const adapters::LoraAdapter<T>*,                          \
                                 std::span<const std::int32_t>, std::span<const std::int32_t>);                    \
    template DecoderModel<T> merge_adapter<T>(const DecoderModel<T>&, const adapters::LoraAdapter<T>&);           \
    template class InferenceSession<T>;                                                                            \
    template std::vector<std::int32_t> generate<T>(const DecoderModel<T>&, const adapters::LoraAdapter<T>*,        \
                                                   std::span<const std::int32_t>, const GenerateOptions&);

ADFG_INSTANTIATE_MODEL(float)
ADFG_INSTANTIATE_MODEL(double)

template DecoderModel<double> DecoderModel<float>::cast<double>() const;
template DecoderModel<float> DecoderModel<double>::cast<float>() const;
template DecoderModel<float> DecoderModel<float>::cast<float>() const;
template DecoderModel<double> DecoderModel<double>::cast<double>() const;

}  // namespace adfg::model
