// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <ostream>
#include <set>

#include "adfg/error.hpp"
#include "adfg/numerics/ops.hpp"
#include "adfg/release/checkpoint.hpp"
#include "adfg/rng.hpp"

namespace adfg::trainer {

using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

std::string to_string(Mode m) { return m == Mode::adapt ? "adapt" : "sft"; }

Mode mode_from_string(std::string_view s) {
    if (s == "adapt") {
        return Mode::adapt;
    }
    if (s == "sft") {
        return Mode::sft;
    }
    throw InvalidArgument("unknown training mode: " + std::string(s));
}

Preset preset_from_string(std::string_view s) {
    if (s == "adapt") {
        return Preset::adapt;
    }
    if (s == "chat") {
        return Preset::chat;
    }
    if (s == "instruct") {
        return Preset::instruct;
    }
    throw InvalidArgument("unknown preset: " + std::string(s));
}

TrainConfig TrainConfig::preset(Preset p) {
    TrainConfig c;
    switch (p) {
        case Preset::adapt:
            break;
        case Preset::chat:
            c.mode = Mode::sft;
            c.lr_peak = 2e-5;
            c.weight_decay = 0.0;
            c.total_steps = 15000;
            c.per_device_batch = 16;
            c.n_devices = 8;
            c.accum_steps = 1;
            c.max_length = 2048;
            break;
        case Preset::instruct:
            c.mode = Mode::sft;
            c.lr_peak = 2e-5;
            c.weight_decay = 0.0;
            c.total_steps = 15000;
            c.per_device_batch = 4;
            c.n_devices = 4;
            c.accum_steps = 8;
            c.max_length = 512;
            break;
    }
    return c;
}

std::size_t TrainConfig::warmup_steps() const {
    return static_cast<std::size_t>(std::llround(warmup_ratio * static_cast<double>(total_steps)));
}

void TrainConfig::validate() const {
    const auto require = [](bool ok, const char* what) {
        if (!ok) {
            throw InvalidArgument(std::string("train config: ") + what);
        }
    };
    require(warmup_ratio > 0.0 && warmup_ratio < 1.0, "warmup_ratio must lie in (0, 1)");
    require(total_steps > 0, "total_steps must be positive");
    require(lr_peak > 0.0 && std::isfinite(lr_peak), "lr_peak must be positive");
    require(clip_norm > 0.0, "clip_norm must be positive");
    require(weight_decay >= 0.0, "weight_decay must be non-negative");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
    require(eps > 0.0, "eps must be positive");
    require(accum_steps > 0 && per_device_batch > 0 && n_devices > 0, "batch counts must be positive");
    require(max_length > 1, "max_length must exceed 1");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"mode", to_string(mode)},
            {"lr_peak", lr_peak},
            {"warmup_ratio", warmup_ratio},
            {"clip_norm", clip_norm},
            {"weight_decay", weight_decay},
            {"betas", {beta1, beta2}},
            {"eps", eps},
            {"total_steps", total_steps},
            {"accum_steps", accum_steps},
            {"per_device_batch", per_device_batch},
            {"n_devices", n_devices},
            {"max_length", max_length},
            {"seed", seed},
            {"segment_masking", segment_masking},
            {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
    if (!j.is_object()) {
        throw InvalidArgument("train config must be a JSON object");
    }
    static const std::set<std::string> known{"mode",       "lr_peak",     "warmup_ratio",     "clip_norm",
                                             "weight_decay", "betas",     "eps",              "total_steps",
                                             "accum_steps", "per_device_batch", "n_devices",  "max_length",
                                             "seed",       "segment_masking", "checkpoint_every"};
    for (const auto& [key, _] : j.items()) {
        if (known.count(key) == 0) {
            throw InvalidArgument("train config: unknown key '" + key + "'");
        }
    }
    TrainConfig c = base;
    try {
        if (j.contains("mode")) {
            c.mode = mode_from_string(j["mode"].get<std::string>());
        }
        c.lr_peak = j.value("lr_peak", c.lr_peak);
        c.warmup_ratio = j.value("warmup_ratio", c.warmup_ratio);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        if (j.contains("betas")) {
            const auto& b = j["betas"];
            if (!b.is_array() || b.size() != 2) {
                throw InvalidArgument("train config: betas must be a pair");
            }
            c.beta1 = b[0].get<double>();
            c.beta2 = b[1].get<double>();
        }
        c.eps = j.value("eps", c.eps);
        c.total_steps = j.value("total_steps", c.total_steps);
        c.accum_steps = j.value("accum_steps", c.accum_steps);
        c.per_device_batch = j.value("per_device_batch", c.per_device_batch);
        c.n_devices = j.value("n_devices", c.n_devices);
        c.max_length = j.value("max_length", c.max_length);
        c.seed = j.value("seed", c.seed);
        c.segment_masking = j.value("segment_masking", c.segment_masking);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

double lr_at(std::size_t step, const TrainConfig& cfg) {
    if (step > cfg.total_steps) {
        throw InvalidArgument("lr_at: step beyond total_steps");
    }
    const std::size_t warmup = cfg.warmup_steps();
    if (step < warmup) {
        return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    const std::size_t decay = cfg.total_steps - warmup;
    if (decay == 0) {
        return cfg.lr_peak;
    }
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(decay);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void adamw_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, OptimizerState<T>& state,
                double lr, const TrainConfig& cfg, const std::vector<ParamGroup>& groups) {
    if (params.size() != grads.size() || (!groups.empty() && groups.size() != params.size())) {
        throw DimensionError("adamw_step: parameter, gradient and group counts differ");
    }
    if (lr < 0.0) {
        throw InvalidArgument("adamw_step: negative learning rate");
    }
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.push_back(Tensor<T>::zeros(p->shape()));
            state.v.push_back(Tensor<T>::zeros(p->shape()));
        }
    }
    if (state.m.size() != params.size()) {
        throw DimensionError("adamw_step: optimizer state tracks a different parameter set");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        const auto& g = grads[i];
        if (g.shape() != p.shape() || state.m[i].shape() != p.shape()) {
            throw DimensionError("adamw_step: shape mismatch for parameter " + std::to_string(i));
        }
        const double wd = (groups.empty() || groups[i].decay) ? cfg.weight_decay : 0.0;
        auto pd = p.data();
        const auto gd = g.data();
        auto md = state.m[i].data();
        auto vd = state.v[i].data();
        for (std::size_t k = 0; k < pd.size(); ++k) {
            const double gk = static_cast<double>(gd[k]);
            const double m = cfg.beta1 * static_cast<double>(md[k]) + (1.0 - cfg.beta1) * gk;
            const double v = cfg.beta2 * static_cast<double>(vd[k]) + (1.0 - cfg.beta2) * gk * gk;
            md[k] = static_cast<T>(m);
            vd[k] = static_cast<T>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
            const double pk = static_cast<double>(pd[k]);
            pd[k] = static_cast<T>(pk - lr * update - lr * wd * pk);
        }
    }
}

template <typename T>
double clip_gradients(std::vector<Tensor<T>>& grads, double clip_norm) {
    if (!(clip_norm > 0.0)) {
        throw InvalidArgument("clip_gradients: clip_norm must be positive");
    }
    double sq = 0.0;
    for (const auto& g : grads) {
        for (const T v : g.data()) {
            sq += static_cast<double>(v) * static_cast<double>(v);
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_norm && std::isfinite(norm)) {
        const double factor = clip_norm / norm;
        for (auto& g : grads) {
            for (auto& v : g.data()) {
                v = static_cast<T>(static_cast<double>(v) * factor);
            }
        }
    }
    return norm;
}

nlohmann::json StepMetrics::to_json() const {
    return {{"step", step},
            {"lr", lr},
            {"loss", loss},
            {"grad_norm", grad_norm},
            {"effective_batch", effective_batch},
            {"tokens", tokens}};
}

std::string checkpoint_name(std::size_t step, bool final) {
    if (final) {
        return "final.adfg";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "step-%07zu.adfg", step);
    return buf;
}

namespace {

template <typename T>
std::vector<Var> trainable_vars(const model::Bound& bound, const model::DecoderModel<T>& model,
                                const adapters::LoraAdapter<T>* adapter) {
    std::vector<Var> vars;
    if (adapter != nullptr) {
        for (const auto& n : adapter->order) {
            vars.push_back(bound.lora.at(n).a);
            vars.push_back(bound.lora.at(n).b);
        }
    } else {
        for (const auto& n : model.names()) {
            vars.push_back(bound.weights.at(n));
        }
    }
    return vars;
}

template <typename T>
std::vector<Tensor<T>*> trainable_params(model::DecoderModel<T>& model, adapters::LoraAdapter<T>* adapter) {
    std::vector<Tensor<T>*> params;
    if (adapter != nullptr) {
        for (const auto& n : adapter->order) {
            auto& pair = adapter->pairs.at(n);
            params.push_back(&pair.a);
            params.push_back(&pair.b);
        }
    } else {
        for (const auto& n : model.names()) {
            params.push_back(&model.dense(n));
        }
    }
    return params;
}

template <typename T>
std::string write_checkpoint(const model::DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter,
                             const TrainConfig& cfg, std::size_t step, bool final, const std::string& dir,
                             const std::string& base_fp) {
    auto c = adapter != nullptr ? release::adapter_to_container(*adapter, base_fp) : release::model_to_container(model);
    c.meta["train"] = {{"step", step}, {"config", cfg.to_json()}};
    const auto path = (std::filesystem::path(dir) / checkpoint_name(step, final)).string();
    c.save(path);
    return path;
}

template <typename T>
bool all_finite(const std::vector<Tensor<T>>& grads) {
    for (const auto& g : grads) {
        for (const T v : g.data()) {
            if (!std::isfinite(static_cast<double>(v))) {
                return false;
            }
        }
    }
    return true;
}

}  // namespace

template <typename T>
TrainResult train(model::DecoderModel<T>& model, adapters::LoraAdapter<T>* adapter,
                  const std::vector<datapipe::PackedSequence>& data, const TrainConfig& cfg, const TrainIo& io) {
    cfg.validate();
    if (data.empty()) {
        throw InvalidArgument("train: dataset is empty");
    }
    const auto vocab = static_cast<std::int32_t>(model.config().vocab_size);
    for (const auto& p : data) {
        if (p.length() > model.config().max_positions) {
            throw InvalidArgument("train: packed length exceeds the model's max_positions");
        }
        for (const auto id : p.ids) {
            if (id < 0 || id >= vocab) {
                throw InvalidArgument("train: token id " + std::to_string(id) + " outside the model vocabulary");
            }
        }
    }
    if (!io.checkpoint_dir.empty()) {
        std::filesystem::create_directories(io.checkpoint_dir);
    }

    const auto schedule = datapipe::make_batches(data.size(), cfg.plan(), cfg.seed, cfg.total_steps);
    const model::Trainable trainable = adapter != nullptr ? model::Trainable::adapter : model::Trainable::base;
    const auto params = trainable_params(model, adapter);
    std::vector<ParamGroup> groups;
    if (adapter == nullptr) {
        for (const auto& n : model.names()) {
            groups.push_back({n.find("norm") == std::string::npos});
        }
    }
    // Only the adapter changes in LoRA mode, so the base fingerprint is fixed.
    const std::string base_fp =
        (adapter != nullptr && !io.checkpoint_dir.empty()) ? release::model_fingerprint(model) : std::string{};
    const double micro_scale = 1.0 / static_cast<double>(cfg.accum_steps * cfg.n_devices);

    std::vector<datapipe::NextTokenTargets> targets;
    targets.reserve(data.size());
    for (const auto& p : data) {
        targets.push_back(datapipe::next_token_targets(p));
    }

    Rng dropout_rng = Rng::derive(cfg.seed, fnv1a("dropout"));
    OptimizerState<T> opt;
    TrainResult result;
    for (std::size_t s = 0; s < schedule.steps.size(); ++s) {
        const std::size_t step = s + 1;
        std::vector<Tensor<T>> grads;
        for (const auto* p : params) {
            grads.push_back(Tensor<T>::zeros(p->shape()));
        }
        double loss = 0.0;
        std::size_t tokens = 0;
        try {
            for (const auto& micro : schedule.steps[s].micro) {
                std::size_t n = 0;
                for (const auto idx : micro) {
                    n += targets[idx].count();
                }
                if (n == 0) {
                    continue;
                }
                Tape<T> tape;
                const auto bound = model::bind(tape, model, adapter, trainable);
                Var total;
                for (const auto idx : micro) {
                    const auto& t = targets[idx];
                    const std::size_t count = t.count();
                    if (count == 0) {
                        continue;
                    }
                    const auto& p = data[idx];
                    const std::span<const std::int32_t> segs =
                        cfg.segment_masking ? std::span<const std::int32_t>(p.segments) : std::span<const std::int32_t>{};
                    const Var lg = model::forward(tape, model, bound, adapter, p.ids, segs,
                                                  model::ForwardOptions{true, &dropout_rng});
                    const Var xent = numerics::softmax_xent(tape, lg, t.targets, t.mask);
                    const Var part = numerics::scale(
                        tape, xent, static_cast<T>(static_cast<double>(count) / static_cast<double>(n) * micro_scale));
                    total = total.valid() ? numerics::add(tape, total, part) : part;
                }
                loss += static_cast<double>(tape.value(total)[0]);
                tokens += n;
                tape.backward(total);
                const auto vars = trainable_vars(bound, model, adapter);
                for (std::size_t i = 0; i < vars.size(); ++i) {
                    if (const auto* g = tape.grad(vars[i]); g != nullptr) {
                        auto gd = grads[i].data();
                        const auto src = g->data();
                        for (std::size_t k = 0; k < gd.size(); ++k) {
                            gd[k] += src[k];
                        }
                    }
                }
            }
        } catch (const NumericError& e) {
            throw NumericError("step " + std::to_string(step) + ": " + e.what() +
                               "; training aborted at the last good step " + std::to_string(step - 1));
        }
        if (!std::isfinite(loss) || !all_finite(grads)) {
            throw NumericError("step " + std::to_string(step) + ": non-finite loss or gradient; training aborted at "
                               "the last good step " + std::to_string(step - 1));
        }
        const double grad_norm = clip_gradients(grads, cfg.clip_norm);
        const double lr = lr_at(step, cfg);
        adamw_step(params, grads, opt, lr, cfg, groups);

        const StepMetrics m{step, lr, loss, grad_norm, cfg.effective_batch(), tokens};
        result.metrics.push_back(m);
        if (io.metrics != nullptr) {
            *io.metrics << m.to_json().dump() << '\n';
        }
        if (io.log != nullptr && io.log_every != 0 && (step % io.log_every == 0 || step == schedule.steps.size())) {
            *io.log << "step " << step << "/" << schedule.steps.size() << " loss " << loss << " lr " << lr
                    << " grad_norm " << grad_norm << '\n';
        }
        if (!io.checkpoint_dir.empty()) {
            const bool last = step == schedule.steps.size();
            if (cfg.checkpoint_every != 0 && step % cfg.checkpoint_every == 0 && !last) {
                result.checkpoints.push_back(
                    write_checkpoint(model, adapter, cfg, step, false, io.checkpoint_dir, base_fp));
            }
            if (last) {
                result.checkpoints.push_back(
                    write_checkpoint(model, adapter, cfg, step, true, io.checkpoint_dir, base_fp));
            }
        }
    }
    if (io.metrics != nullptr) {
        io.metrics->flush();
    }
    return result;
}

template <typename T>
double evaluate_perplexity(const model::DecoderModel<T>& model, const adapters::LoraAdapter<T>* adapter,
                           const std::vector<datapipe::PackedSequence>& data, bool segment_masking) {
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& p : data) {
        const auto t = datapipe::next_token_targets(p);
        const std::size_t n = t.count();
        if (n == 0) {
            continue;
        }
        const std::span<const std::int32_t> segs =
            segment_masking ? std::span<const std::int32_t>(p.segments) : std::span<const std::int32_t>{};
        const auto lg = model::logits(model, adapter, p.ids, segs);
        nll += numerics::softmax_xent_value(lg, t.targets, t.mask) * static_cast<double>(n);
        count += n;
    }
    if (count == 0) {
        throw InvalidArgument("evaluate_perplexity: dataset has no targets");
    }
    return std::exp(nll / static_cast<double>(count));
}

#define ADFG_INSTANTIATE(T)                                                                                    \
    template void adamw_step<T>(const std::vector<Tensor<T>*>&, const std::vector<Tensor<T>>&, OptimizerState<T>&, \
                                double, const TrainConfig&, const std::vector<ParamGroup>&);                   \
    template double clip_gradients<T>(std::vector<Tensor<T>>&, double);                                        \
    template TrainResult train<T>(model::DecoderModel<T>&, adapters::LoraAdapter<T>*,                           \
                                  const std::vector<datapipe::PackedSequence>&, const TrainConfig&, const TrainIo&); \
    template double evaluate_perplexity<T>(const model::DecoderModel<T>&, const adapters::LoraAdapter<T>*,      \
                                           const std::vector<datapipe::PackedSequence>&, bool);

ADFG_INSTANTIATE(float)
ADFG_INSTANTIATE(double)

#undef ADFG_INSTANTIATE

}  // namespace adfg::trainer
