// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/release/checkpoint.hpp"

#include <cstring>

namespace adfg::release {

namespace {

using numerics::Tensor;

constexpr std::string_view kAbsmax = "@absmax";
constexpr std::string_view kAbsmaxCodes = "@absmax_codes";
constexpr std::string_view kAbsmaxScales = "@absmax_scales";

std::string meta_kind(const Container& c) {
    if (!c.meta.is_object() || !c.meta.contains("kind") || !c.meta["kind"].is_string()) {
        throw FormatError("container metadata has no kind");
    }
    return c.meta["kind"].get<std::string>();
}

void expect_kind(const Container& c, std::string_view kind) {
    const auto k = meta_kind(c);
    if (k != kind) {
        throw FormatError("expected a " + std::string(kind) + " container, found " + k);
    }
}

template <typename T>
Tensor<T> tensor_from_blob(const Container& c, const std::string& name) {
    const Blob& b = c.at(name);
    return Tensor<T>(b.shape, c.get_array<T>(name));
}

void put_quantized(Container& c, const std::string& name, const quantize::QuantizedTensor& q) {
    nlohmann::json attrs{{"quant", "nf4"},
                         {"shape", q.shape},
                         {"block_size", q.block_size},
                         {"double_quant", q.double_quantized()}};
    if (const auto* dq = std::get_if<quantize::DoubleQuantized>(&q.absmax)) {
        attrs["constant_block_size"] = dq->block_size;
    }
    c.put_array<std::uint8_t>(name, {q.packed_codes.size()}, q.packed_codes, attrs);
    if (const auto* dq = std::get_if<quantize::DoubleQuantized>(&q.absmax)) {
        c.put_array<std::uint8_t>(name + std::string(kAbsmaxCodes), {dq->codes.size()}, dq->codes);
        c.put_array<float>(name + std::string(kAbsmaxScales), {dq->scales.size()}, dq->scales);
    } else {
        const auto& absmax = std::get<std::vector<float>>(q.absmax);
        c.put_array<float>(name + std::string(kAbsmax), {absmax.size()}, absmax);
    }
}

quantize::QuantizedTensor get_quantized(const Container& c, const std::string& name) {
    const auto& attrs = c.at(name).attrs;
    quantize::QuantizedTensor q;
    try {
        q.shape = attrs.at("shape").get<numerics::Shape>();
        q.block_size = attrs.at("block_size").get<std::size_t>();
        q.packed_codes = c.get_array<std::uint8_t>(name);
        if (attrs.at("double_quant").get<bool>()) {
            quantize::DoubleQuantized dq;
            dq.block_size = attrs.at("constant_block_size").get<std::size_t>();
            dq.codes = c.get_array<std::uint8_t>(name + std::string(kAbsmaxCodes));
            dq.scales = c.get_array<float>(name + std::string(kAbsmaxScales));
            q.absmax = std::move(dq);
        } else {
            q.absmax = c.get_array<float>(name + std::string(kAbsmax));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("quantized blob '" + name + "' has bad attributes: " + e.what());
    }
    try {
        q.validate();
    } catch (const Error& e) {
        throw FormatError("quantized blob '" + name + "' is inconsistent: " + e.what());
    }
    return q;
}

bool same_bits(float a, float b) {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    std::memcpy(&x, &a, sizeof x);
    std::memcpy(&y, &b, sizeof y);
    return x == y;
}

float add_via_double(float base, float delta) {
    return static_cast<float>(static_cast<double>(base) + static_cast<double>(delta));
}

}  // namespace

template <typename T>
Container model_to_container(const model::DecoderModel<T>& m) {
    Container c;
    c.meta = {{"kind", "model"}, {"config", m.config().to_json()}};
    for (const auto& name : m.names()) {
        if (m.is_quantized(name)) {
            put_quantized(c, name, m.quantized(name));
        } else {
            const auto& t = m.dense(name);
            c.put_array<T>(name, t.shape(), t.data());
        }
    }
    return c;
}

template <typename T>
model::DecoderModel<T> model_from_container(const Container& c) {
    expect_kind(c, "model");
    model::ModelConfig cfg;
    try {
        cfg = model::ModelConfig::from_json(c.meta.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model container has no config: ") + e.what());
    }
    std::vector<std::string> names;
    std::map<std::string, model::Weight<T>> weights;
    for (const auto& name : c.names()) {
        if (name.find('@') != std::string::npos) {
            continue;
        }
        names.push_back(name);
        if (c.at(name).attrs.contains("quant")) {
            weights.emplace(name, get_quantized(c, name));
        } else {
            weights.emplace(name, tensor_from_blob<T>(c, name));
        }
    }
    try {
        return model::DecoderModel<T>(cfg, std::move(names), std::move(weights));
    } catch (const FormatError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(std::string("model container does not describe a valid model: ") + e.what());
    }
}

template <typename T>
std::string model_fingerprint(const model::DecoderModel<T>& m) {
    return to_hex(model_to_container(m).fingerprint());
}

template <typename T>
Container adapter_to_container(const adapters::LoraAdapter<T>& a, const std::string& base_fingerprint) {
    Container c;
    c.meta = {{"kind", "adapter"}, {"lora", a.config.to_json()}, {"base_fingerprint", base_fingerprint}};
    for (const auto& name : a.order) {
        const auto& pair = a.at(name);
        c.put_array<T>(name + ".lora_a", pair.a.shape(), pair.a.data());
        c.put_array<T>(name + ".lora_b", pair.b.shape(), pair.b.data());
    }
    return c;
}

template <typename T>
adapters::LoraAdapter<T> adapter_from_container(const Container& c) {
    expect_kind(c, "adapter");
    adapters::LoraAdapter<T> a;
    try {
        a.config = adapters::LoraConfig::from_json(c.meta.at("lora"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("adapter container has no lora config: ") + e.what());
    }
    const auto& names = c.names();
    if (names.size() % 2 != 0) {
        throw FormatError("adapter container has an unpaired blob");
    }
    for (std::size_t i = 0; i < names.size(); i += 2) {
        const std::string& an = names[i];
        const std::string suffix = ".lora_a";
        if (an.size() <= suffix.size() || an.compare(an.size() - suffix.size(), suffix.size(), suffix) != 0) {
            throw FormatError("adapter blob '" + an + "' is not a lora_a matrix");
        }
        const std::string weight = an.substr(0, an.size() - suffix.size());
        if (names[i + 1] != weight + ".lora_b") {
            throw FormatError("adapter blob '" + an + "' is not followed by its lora_b matrix");
        }
        auto A = tensor_from_blob<T>(c, an);
        auto B = tensor_from_blob<T>(c, names[i + 1]);
        if (A.rank() != 2 || B.rank() != 2 || A.dim(0) != a.config.r || B.dim(1) != a.config.r) {
            throw FormatError("adapter matrices for '" + weight + "' do not match the rank");
        }
        A.set_requires_grad(true);
        B.set_requires_grad(true);
        a.order.push_back(weight);
        a.pairs.emplace(weight, adapters::LoraPair<T>{std::move(A), std::move(B)});
    }
    return a;
}

std::string adapter_base_fingerprint(const Container& c) {
    expect_kind(c, "adapter");
    return c.meta.value("base_fingerprint", std::string());
}

Container diff(const model::DecoderModel<float>& base, const model::DecoderModel<float>& finetuned,
               DiffSummary* summary) {
    if (base.names() != finetuned.names()) {
        throw InvalidArgument("diff: base and finetuned models have different weight names");
    }
    Container c;
    c.meta = {{"kind", "diff"},
              {"base_fingerprint", model_fingerprint(base)},
              {"config", finetuned.config().to_json()}};
    DiffSummary s;
    for (const auto& name : base.names()) {
        if (base.is_quantized(name) || finetuned.is_quantized(name)) {
            throw InvalidArgument("diff: weight '" + name + "' is quantized");
        }
        const auto& b = base.dense(name);
        const auto& f = finetuned.dense(name);
        if (b.shape() != f.shape()) {
            throw InvalidArgument("diff: shape mismatch for '" + name + "'");
        }
        std::vector<float> d(b.numel());
        bool exact = true;
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] = static_cast<float>(static_cast<double>(f[i]) - static_cast<double>(b[i]));
            exact = exact && same_bits(add_via_double(b[i], d[i]), f[i]);
        }
        ++s.tensors;
        if (exact) {
            c.put_array<float>(name, b.shape(), d, {{"mode", "delta"}});
        } else {
            ++s.replaced;
            c.put_array<float>(name, f.shape(), f.data(), {{"mode", "replace"}});
        }
    }
    if (summary != nullptr) {
        *summary = s;
    }
    return c;
}

std::string diff_base_fingerprint(const Container& d) {
    expect_kind(d, "diff");
    return d.meta.value("base_fingerprint", std::string());
}

model::DecoderModel<float> apply_diff(const model::DecoderModel<float>& base, const Container& d) {
    const std::string expected = diff_base_fingerprint(d);
    const std::string actual = model_fingerprint(base);
    if (expected != actual) {
        throw FingerprintError("diff was made against base " + expected + ", got " + actual);
    }
    model::DecoderModel<float> out = base;
    for (const auto& name : d.names()) {
        if (!base.has(name)) {
            throw FormatError("diff names unknown weight '" + name + "'");
        }
        const auto& b = base.dense(name);
        const Blob& blob = d.at(name);
        if (blob.shape != b.shape()) {
            throw FormatError("diff shape mismatch for '" + name + "'");
        }
        const auto values = d.get_array<float>(name);
        const std::string mode = blob.attrs.value("mode", std::string("delta"));
        auto& target = out.dense(name);
        if (mode == "replace") {
            std::copy(values.begin(), values.end(), target.data().begin());
        } else if (mode == "delta") {
            for (std::size_t i = 0; i < values.size(); ++i) {
                target[i] = add_via_double(b[i], values[i]);
            }
        } else {
            throw FormatError("diff tensor '" + name + "' has unknown mode " + mode);
        }
    }
    return out;
}

model::DecoderModel<float> apply_chain(const model::DecoderModel<float>& base, const std::vector<ChainStep>& steps) {
    model::DecoderModel<float> running = base;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (const auto* a = std::get_if<AdapterStep>(&steps[i])) {
            if (!a->base_fingerprint.empty() && a->base_fingerprint != model_fingerprint(running)) {
                throw FingerprintError("chain step " + std::to_string(i) + ": adapter was trained on another base");
            }
            // A QLoRA adapter folds into the dequantized weights it was trained against.
            running = model::merge_adapter(running.dequantized(), a->adapter);
        } else {
            const auto& d = std::get<DiffStep>(steps[i]).diff;
            try {
                running = apply_diff(running, d);
            } catch (const FingerprintError& e) {
                throw FingerprintError("chain step " + std::to_string(i) + ": " + e.what());
            }
        }
    }
    return running;
}

ChainStep load_chain_step(const Container& c) {
    const auto kind = meta_kind(c);
    if (kind == "adapter") {
        return AdapterStep{adapter_from_container<float>(c), adapter_base_fingerprint(c)};
    }
    if (kind == "diff") {
        return DiffStep{c};
    }
    throw FormatError("container of kind " + kind + " is not a chain step");
}

#define ADFG_INSTANTIATE_RELEASE(T)                                                              \
    template Container model_to_container<T>(const model::DecoderModel<T>&);                     \
    template model::DecoderModel<T> model_from_container<T>(const Container&);                   \
    template std::string model_fingerprint<T>(const model::DecoderModel<T>&);                    \
    template Container adapter_to_container<T>(const adapters::LoraAdapter<T>&, const std::string&); \
    template adapters::LoraAdapter<T> adapter_from_container<T>(const Container&);

ADFG_INSTANTIATE_RELEASE(float)
ADFG_INSTANTIATE_RELEASE(double)

#undef ADFG_INSTANTIATE_RELEASE

}  // namespace adfg::release
