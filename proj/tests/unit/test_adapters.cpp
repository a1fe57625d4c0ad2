// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstring>

#include "adfg/adapters/lora.hpp"
#include "adfg/model/decoder.hpp"
#include "adfg/numerics/ops.hpp"

using namespace adfg;
using namespace adfg::adapters;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

namespace {

LoraConfig no_dropout(std::size_t r = 4, double alpha = 8.0) {
    LoraConfig c;
    c.r = r;
    c.alpha = alpha;
    c.dropout = 0.0;
    return c;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    return a.identical(b);
}

}  // namespace

TEST_CASE("defaults and validation") {
    const LoraConfig c;
    CHECK(c.r == 64);
    CHECK(c.alpha == 16.0);
    CHECK(c.dropout == 0.1);
    CHECK(c.targets == std::vector<std::string>{"q", "k", "v", "o"});
    CHECK(c.scaling() == 0.25);
    LoraConfig bad = c;
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.targets = {"qq"};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("init_adapter shapes, counts and determinism") {
    const LoraConfig c;
    const auto a1 = init_adapter<float>(c, {{"w", 128, 128}}, 42);
    const auto a2 = init_adapter<float>(c, {{"w", 128, 128}}, 42);
    const auto a3 = init_adapter<float>(c, {{"w", 128, 128}}, 43);
    CHECK(a1.parameter_count() == 16384);
    CHECK(a1.at("w").a.shape() == numerics::Shape{64, 128});
    CHECK(a1.at("w").b.shape() == numerics::Shape{128, 64});
    CHECK(a1.at("w").a.identical(a2.at("w").a));
    CHECK_FALSE(a1.at("w").a.identical(a3.at("w").a));
    for (const float v : a1.at("w").b.values()) {
        CHECK(v == 0.0f);
    }
    double ss = 0.0;
    for (const float v : a1.at("w").a.values()) {
        ss += static_cast<double>(v) * v;
    }
    CHECK(std::sqrt(ss / 8192.0) == doctest::Approx(0.02).epsilon(0.05));
    CHECK(a1.at("w").a.requires_grad());
    CHECK_THROWS_AS(init_adapter<float>(c, {{"w", 128, 32}}, 1), InvalidArgument);
    CHECK_THROWS_AS(init_adapter<float>(c, {{"w", 64, 64}, {"w", 64, 64}}, 1), InvalidArgument);
}

TEST_CASE("hand example of the adapted projection") {
    LoraConfig c = no_dropout(1, 1.0);
    const LoraPair<double> pair{Tensor<double>({1, 2}, {1, 0}), Tensor<double>({2, 1}, {0, 1})};
    const Tensor<double> x({1, 2}, {3, 5});
    const std::variant<Tensor<double>, quantize::QuantizedTensor> w = Tensor<double>::zeros({2, 2});
    const auto y = adapted_forward(x, w, pair, c, false, nullptr);
    CHECK(y.values() == std::vector<double>{0, 3});
}

TEST_CASE("zero B leaves the base projection bitwise unchanged") {
    Rng rng(1);
    const auto x = Tensor<float>::randn({5, 16}, rng, 1.0);
    const auto w = Tensor<float>::randn({12, 16}, rng, 0.3);
    const auto adapter = init_adapter<float>(no_dropout(), {{"w", 12, 16}}, 3);
    const auto y = adapted_forward<float>(x, w, adapter.at("w"), adapter.config, false, nullptr);
    Tape<float> tape;
    const auto base = tape.value(numerics::linear(tape, tape.constant(x), tape.constant(w)));
    CHECK(bitwise_equal(y, base));
}

TEST_CASE("quantized base path equals the dequantize-then-dense path") {
    Rng rng(2);
    const auto x = Tensor<float>::randn({7, 64}, rng, 1.0);
    const auto w = Tensor<float>::randn({32, 64}, rng, 0.1);
    auto adapter = init_adapter<float>(no_dropout(8), {{"w", 32, 64}}, 4);
    adapter.at("w").b = Tensor<float>::randn({32, 8}, rng, 0.1);
    const auto q = quantize::quantize_nf4(w, 64, true);
    const auto via_q = adapted_forward<float>(x, q, adapter.at("w"), adapter.config, false, nullptr);
    const auto via_dense =
        adapted_forward<float>(x, quantize::dequantize<float>(q), adapter.at("w"), adapter.config, false, nullptr);
    CHECK(numerics::max_abs_diff(via_q, via_dense) <= 1e-6);
}

TEST_CASE("gradients reach only the adapter matrices") {
    Rng rng(3);
    auto adapter = init_adapter<double>(no_dropout(2), {{"w", 6, 5}}, 5);
    adapter.at("w").b = Tensor<double>::randn({6, 2}, rng, 0.5);
    Tape<double> tape;
    const Var x = tape.constant(Tensor<double>::randn({3, 5}, rng, 1.0));
    const Var w = tape.constant(Tensor<double>::randn({6, 5}, rng, 1.0));
    const LoraVars lv{tape.leaf(adapter.at("w").a, true), tape.leaf(adapter.at("w").b, true)};
    const Var y = adapted_linear(tape, x, w, &lv, 1.0, {});
    tape.backward(numerics::sum(tape, numerics::mul(tape, y, y)));
    CHECK(tape.grad(w) == nullptr);
    CHECK(tape.grad(lv.a) != nullptr);
    CHECK(tape.grad(lv.b) != nullptr);
}

TEST_CASE("doubling alpha and halving B is exact") {
    Rng rng(4);
    const auto x = Tensor<float>::randn({4, 16}, rng, 1.0);
    const auto w = Tensor<float>::randn({16, 16}, rng, 0.2);
    auto pair = init_adapter<float>(no_dropout(4, 8.0), {{"w", 16, 16}}, 6).at("w");
    pair.b = Tensor<float>::randn({16, 4}, rng, 0.3);
    auto halved = pair;
    for (auto& v : halved.b.data()) {
        v /= 2.0f;
    }
    const auto y1 = adapted_forward<float>(x, w, pair, no_dropout(4, 8.0), false, nullptr);
    const auto y2 = adapted_forward<float>(x, w, halved, no_dropout(4, 16.0), false, nullptr);
    CHECK(bitwise_equal(y1, y2));
}

TEST_CASE("dropout applies to the adapter input with inverted scaling") {
    Rng rng(5);
    const auto x = Tensor<double>::full({200, 32}, 1.0);
    const auto w = Tensor<double>::zeros({32, 32});
    LoraConfig c = no_dropout(32, 32.0);
    c.dropout = 0.25;
    LoraPair<double> pair{Tensor<double>::zeros({32, 32}), Tensor<double>::zeros({32, 32})};
    for (std::size_t i = 0; i < 32; ++i) {
        pair.a.at(i, i) = 1.0;
        pair.b.at(i, i) = 1.0;
    }
    Rng r1(9);
    Rng r2(9);
    const auto y1 = adapted_forward<double>(x, w, pair, c, true, &r1);
    const auto y2 = adapted_forward<double>(x, w, pair, c, true, &r2);
    CHECK(y1.identical(y2));
    std::size_t zeros = 0;
    double total = 0.0;
    for (const double v : y1.values()) {
        CHECK((v == 0.0 || std::abs(v - 4.0 / 3.0) < 1e-12));
        zeros += v == 0.0;
        total += v;
    }
    CHECK(static_cast<double>(zeros) / 6400.0 == doctest::Approx(0.25).epsilon(0.1));
    CHECK(total / 6400.0 == doctest::Approx(1.0).epsilon(0.05));
    const auto eval = adapted_forward<double>(x, w, pair, c, false, &r1);
    for (const double v : eval.values()) {
        CHECK(v == 1.0);
    }
}

TEST_CASE("merge semantics") {
    Rng rng(6);
    const auto w = Tensor<double>::randn({8, 12}, rng, 1.0);
    auto pair = init_adapter<double>(no_dropout(3), {{"w", 8, 12}}, 7).at("w");
    const auto c = no_dropout(3);
    CHECK(merge(pair, c, w).identical(w));
    pair.b = Tensor<double>::randn({8, 3}, rng, 1.0);
    const auto once = merge(pair, c, w);
    const auto twice = merge(pair, c, once);
    const auto delta = delta_weight(pair, c);
    double worst = 0.0;
    bool differs = false;
    for (std::size_t i = 0; i < w.numel(); ++i) {
        worst = std::max(worst, std::abs((twice[i] - once[i]) - delta[i]));
        differs = differs || twice[i] != once[i];
    }
    CHECK(differs);
    CHECK(worst <= 1e-12);
    const auto q = quantize::quantize_nf4(w.cast<float>(), 64, false);
    CHECK_THROWS_AS(merge(pair, c, q), InvalidArgument);
    CHECK_THROWS_AS(merge(pair, c, Tensor<double>::zeros({12, 8})), DimensionError);
}

TEST_CASE("trainable parameter report") {
    const model::DecoderModel<float> m = model::DecoderModel<float>::init(model::ModelConfig{}, 1);
    const LoraConfig c;
    const auto adapter = init_adapter<float>(c, m.target_shapes(c.targets), 2);
    const auto report = trainable_param_report(m.parameter_count(), &adapter);
    CHECK(report.trainable == 131072);
    CHECK(report.frozen == m.parameter_count());
    CHECK(trainable_param_report<float>(m.parameter_count(), nullptr).trainable == 0);
    double last = 0.0;
    for (const std::size_t r : {1, 8, 32, 64, 128}) {
        LoraConfig cr = c;
        cr.r = r;
        const auto a = init_adapter<float>(cr, m.target_shapes(cr.targets), 2);
        const double ratio = trainable_param_report(m.parameter_count(), &a).ratio();
        CHECK(ratio > last);
        last = ratio;
    }
}
