// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/adapters/lora.hpp"

#include <algorithm>

#include "adfg/kernels/gemm.hpp"
#include "adfg/numerics/ops.hpp"

namespace adfg::adapters {

using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

void LoraConfig::validate() const {
    if (r == 0) {
        throw InvalidArgument("lora: rank must be positive");
    }
    if (!(alpha > 0.0)) {
        throw InvalidArgument("lora: alpha must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw InvalidArgument("lora: dropout must lie in [0, 1)");
    }
    if (!(init_std >= 0.0)) {
        throw InvalidArgument("lora: init_std must be non-negative");
    }
    static const std::vector<std::string> known{"q", "k", "v", "o", "gate", "up", "down"};
    for (const auto& t : targets) {
        if (std::find(known.begin(), known.end(), t) == known.end()) {
            throw InvalidArgument("lora: unknown target matrix '" + t + "'");
        }
    }
}

nlohmann::json LoraConfig::to_json() const {
    return {{"r", r}, {"alpha", alpha}, {"dropout", dropout}, {"targets", targets}, {"init_std", init_std}};
}

LoraConfig LoraConfig::from_json(const nlohmann::json& j) {
    LoraConfig c;
    try {
        c.r = j.value("r", c.r);
        c.alpha = j.value("alpha", c.alpha);
        c.dropout = j.value("dropout", c.dropout);
        c.targets = j.value("targets", c.targets);
        c.init_std = j.value("init_std", c.init_std);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("lora config: ") + e.what());
    }
    c.validate();
    return c;
}

template <typename T>
const LoraPair<T>& LoraAdapter<T>::at(const std::string& weight) const {
    const auto it = pairs.find(weight);
    if (it == pairs.end()) {
        throw InvalidArgument("adapter has no pair for '" + weight + "'");
    }
    return it->second;
}

template <typename T>
LoraPair<T>& LoraAdapter<T>::at(const std::string& weight) {
    const auto it = pairs.find(weight);
    if (it == pairs.end()) {
        throw InvalidArgument("adapter has no pair for '" + weight + "'");
    }
    return it->second;
}

template <typename T>
std::size_t LoraAdapter<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, pair] : pairs) {
        n += pair.a.numel() + pair.b.numel();
    }
    return n;
}

template <typename T>
LoraAdapter<T> init_adapter(const LoraConfig& cfg, const std::vector<TargetShape>& shapes, std::uint64_t seed) {
    cfg.validate();
    LoraAdapter<T> adapter;
    adapter.config = cfg;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& s = shapes[i];
        if (cfg.r > std::min(s.d_in, s.d_out)) {
            throw InvalidArgument("lora: rank " + std::to_string(cfg.r) + " exceeds min(d_in, d_out) of '" + s.name +
                                  "'");
        }
        if (adapter.pairs.count(s.name) != 0) {
            throw InvalidArgument("lora: duplicate target '" + s.name + "'");
        }
        Rng rng = Rng::derive(seed, fnv1a(s.name));
        LoraPair<T> pair{Tensor<T>::randn({cfg.r, s.d_in}, rng, cfg.init_std), Tensor<T>::zeros({s.d_out, cfg.r})};
        pair.a.set_requires_grad(true);
        pair.b.set_requires_grad(true);
        adapter.order.push_back(s.name);
        adapter.pairs.emplace(s.name, std::move(pair));
    }
    return adapter;
}

template <typename T>
Var adapted_linear(Tape<T>& tape, Var x, Var w, const LoraVars* lora, T scaling, DropoutSource dropout) {
    const Var base = numerics::linear(tape, x, w);
    if (lora == nullptr) {
        return base;
    }
    Var input = x;
    if (dropout.active()) {
        Tensor<T> mask(tape.value(x).shape());
        const T keep = static_cast<T>(1.0 / (1.0 - dropout.p));
        for (auto& m : mask.data()) {
            m = dropout.rng->uniform() < dropout.p ? T{0} : keep;
        }
        input = numerics::mul(tape, x, tape.constant(std::move(mask)));
    }
    const Var down = numerics::linear(tape, input, lora->a);
    const Var up = numerics::linear(tape, down, lora->b);
    return numerics::add(tape, base, numerics::scale(tape, up, scaling));
}

template <typename T>
Tensor<T> adapted_forward(const Tensor<T>& x, const std::variant<Tensor<T>, quantize::QuantizedTensor>& base,
                          const LoraPair<T>& pair, const LoraConfig& cfg, bool training, Rng* rng) {
    Tape<T> tape;
    const Var xv = tape.constant(x);
    const Var wv = std::holds_alternative<Tensor<T>>(base)
                       ? tape.constant(std::get<Tensor<T>>(base))
                       : tape.constant(quantize::dequantize<T>(std::get<quantize::QuantizedTensor>(base)));
    const LoraVars lv{tape.leaf(pair.a, true), tape.leaf(pair.b, true)};
    const DropoutSource drop{training ? rng : nullptr, cfg.dropout};
    return tape.value(adapted_linear(tape, xv, wv, &lv, static_cast<T>(cfg.scaling()), drop));
}

template <typename T>
Tensor<T> delta_weight(const LoraPair<T>& pair, const LoraConfig& cfg) {
    const std::size_t d_out = pair.b.dim(0);
    const std::size_t r = pair.b.dim(1);
    const std::size_t d_in = pair.a.dim(1);
    if (pair.a.dim(0) != r) {
        throw DimensionError("lora pair rank mismatch");
    }
    Tensor<T> delta({d_out, d_in});
    kernels::gemm_nn<T>({d_out, r, d_in}, pair.b.data(), pair.a.data(), delta.data(), false);
    const T s = static_cast<T>(cfg.scaling());
    for (auto& v : delta.data()) {
        v *= s;
    }
    return delta;
}

template <typename T>
Tensor<T> merge(const LoraPair<T>& pair, const LoraConfig& cfg, const Tensor<T>& base) {
    const Tensor<T> delta = delta_weight(pair, cfg);
    if (delta.shape() != base.shape()) {
        throw DimensionError("merge: adapter shape " + numerics::shape_string(delta.shape()) +
                             " does not match base " + numerics::shape_string(base.shape()));
    }
    Tensor<T> out = base;
    out.set_requires_grad(false);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] += delta[i];
    }
    return out;
}

template <typename T>
Tensor<T> merge(const LoraPair<T>&, const LoraConfig&, const quantize::QuantizedTensor&) {
    throw InvalidArgument("merge: base weight is quantized; dequantize it explicitly before merging");
}

template <typename T>
ParamReport trainable_param_report(std::size_t base_params, const LoraAdapter<T>* adapter) {
    return ParamReport{adapter == nullptr ? 0 : adapter->parameter_count(), base_params};
}

#define ADFG_INSTANTIATE_LORA(T)                                                                                 \
    template struct LoraAdapter<T>;                                                                              \
    template LoraAdapter<T> init_adapter<T>(const LoraConfig&, const std::vector<TargetShape>&, std::uint64_t); \
    template Var adapted_linear<T>(Tape<T>&, Var, Var, const LoraVars*, T, DropoutSource);                       \
    template Tensor<T> adapted_forward<T>(const Tensor<T>&, const std::variant<Tensor<T>, quantize::QuantizedTensor>&, \
                                          const LoraPair<T>&, const LoraConfig&, bool, Rng*);                    \
    template Tensor<T> delta_weight<T>(const LoraPair<T>&, const LoraConfig&);                                   \
    template Tensor<T> merge<T>(const LoraPair<T>&, const LoraConfig&, const Tensor<T>&);                        \
    template Tensor<T> merge<T>(const LoraPair<T>&, const LoraConfig&, const quantize::QuantizedTensor&);        \
    template ParamReport trainable_param_report<T>(std::size_t, const LoraAdapter<T>*);

ADFG_INSTANTIATE_LORA(float)
ADFG_INSTANTIATE_LORA(double)

}  // namespace adfg::adapters
