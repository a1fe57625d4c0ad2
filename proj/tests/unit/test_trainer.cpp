// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "adfg/release/checkpoint.hpp"
#include "adfg/trainer/trainer.hpp"
#include "support/model_fixtures.hpp"
#include "support/release_fixtures.hpp"
#include "support/trainer_fixtures.hpp"

using namespace adfg;
using namespace adfg::trainer;
using numerics::Tensor;

namespace {

std::string temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("adfg_test_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

}  // namespace

TEST_CASE("learning rate schedule") {
    TrainConfig c;
    CHECK(c.warmup_steps() == 750);
    CHECK(lr_at(0, c) == 0.0);
    CHECK(lr_at(750, c) == doctest::Approx(2e-4).epsilon(1e-15));
    CHECK(lr_at(375, c) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(std::abs(lr_at(25000, c)) <= 1e-20);
    CHECK_THROWS_AS(lr_at(25001, c), InvalidArgument);

    c.total_steps = 1000;  // warmup 30, decay over 970
    CHECK(c.warmup_steps() == 30);
    const double mid = c.lr_peak * std::pow(std::cos(std::numbers::pi / 4.0), 2.0);
    CHECK(lr_at(30 + 485, c) == doctest::Approx(mid).epsilon(1e-12));
    CHECK(lr_at(30 + 485, c) == doctest::Approx(c.lr_peak / 2.0).epsilon(1e-12));

    double prev = -1.0;
    for (std::size_t s = 0; s <= c.warmup_steps(); ++s) {
        CHECK(lr_at(s, c) >= prev);
        prev = lr_at(s, c);
    }
    for (std::size_t s = c.warmup_steps(); s <= c.total_steps; ++s) {
        CHECK(lr_at(s, c) <= prev);
        prev = lr_at(s, c);
    }
}

TEST_CASE("adamw step") {
    TrainConfig c;
    c.weight_decay = 0.0;
    const double lr = 1e-3;

    SUBCASE("zero gradients without decay leave parameters unchanged") {
        auto p = Tensor<double>({3}, {1.0, -2.0, 0.5});
        const auto before = p;
        OptimizerState<double> s;
        adamw_step<double>({&p}, {Tensor<double>::zeros({3})}, s, lr, c);
        CHECK(p.identical(before));
        CHECK(s.step == 1);
    }
    SUBCASE("first step moves by lr against a unit gradient") {
        auto p = Tensor<double>({1}, {0.7});
        OptimizerState<double> s;
        adamw_step<double>({&p}, {Tensor<double>({1}, {1.0})}, s, lr, c);
        // m̂ = 1 and v̂ = 1 after bias correction.
        CHECK(p[0] == doctest::Approx(0.7 - lr / (1.0 + c.eps)).epsilon(1e-15));
    }
    SUBCASE("decoupled decay with zero gradients") {
        c.weight_decay = 0.001;
        auto p = Tensor<double>({2}, {2.0, -4.0});
        OptimizerState<double> s;
        adamw_step<double>({&p}, {Tensor<double>::zeros({2})}, s, lr, c);
        CHECK(p[0] == doctest::Approx(2.0 * (1.0 - lr * 0.001)).epsilon(1e-15));
        CHECK(p[1] == doctest::Approx(-4.0 * (1.0 - lr * 0.001)).epsilon(1e-15));
        auto q = Tensor<double>({1}, {3.0});
        OptimizerState<double> s2;
        adamw_step<double>({&q}, {Tensor<double>::zeros({1})}, s2, lr, c, {ParamGroup{false}});
        CHECK(q[0] == 3.0);
    }
    SUBCASE("multi-step trajectory matches a scalar reference") {
        c.weight_decay = 0.01;
        auto p = Tensor<double>({1}, {0.3});
        OptimizerState<double> s;
        double ref = 0.3;
        double m = 0.0;
        double v = 0.0;
        const double gs[] = {0.5, -1.5, 2.0, 0.0, 0.25};
        for (int t = 1; t <= 5; ++t) {
            const double g = gs[t - 1];
            adamw_step<double>({&p}, {Tensor<double>({1}, {g})}, s, lr, c);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            const double mh = m / (1.0 - std::pow(0.9, t));
            const double vh = v / (1.0 - std::pow(0.999, t));
            ref = ref - lr * mh / (std::sqrt(vh) + 1e-8) - lr * 0.01 * ref;
            CHECK(p[0] == doctest::Approx(ref).epsilon(1e-14));
        }
    }
    SUBCASE("shape mismatch") {
        auto p = Tensor<double>::zeros({2});
        OptimizerState<double> s;
        CHECK_THROWS_AS(adamw_step<double>({&p}, {Tensor<double>::zeros({3})}, s, lr, c), DimensionError);
        CHECK_THROWS_AS(adamw_step<double>({&p}, {}, s, lr, c), DimensionError);
    }
}

TEST_CASE("gradient clipping") {
    std::vector<Tensor<double>> g{Tensor<double>({2}, {3.0, 4.0})};
    CHECK(clip_gradients(g, 0.3) == doctest::Approx(5.0));
    CHECK(g[0][0] == doctest::Approx(0.18).epsilon(1e-14));
    CHECK(g[0][1] == doctest::Approx(0.24).epsilon(1e-14));

    std::vector<Tensor<double>> small{Tensor<double>({1}, {0.1})};
    CHECK(clip_gradients(small, 0.3) == doctest::Approx(0.1));
    CHECK(small[0][0] == 0.1);

    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Tensor<double>> gs{Tensor<double>::randn({5, 3}, rng, rng.uniform() * 3.0),
                                       Tensor<double>::randn({7}, rng, rng.uniform())};
        (void)clip_gradients(gs, 0.3);
        double sq = 0.0;
        for (const auto& t : gs) {
            for (const double v : t.data()) {
                sq += v * v;
            }
        }
        CHECK(std::sqrt(sq) <= 0.3 + 1e-12);
    }
    CHECK_THROWS_AS(clip_gradients(g, 0.0), InvalidArgument);
}

TEST_CASE("train config presets and json") {
    const auto adapt = TrainConfig::preset(Preset::adapt);
    CHECK(adapt.lr_peak == 2e-4);
    CHECK(adapt.clip_norm == 0.3);
    CHECK(adapt.weight_decay == 0.001);
    CHECK(adapt.warmup_ratio == 0.03);
    CHECK(adapt.total_steps == 25000);
    CHECK(adapt.max_length == 1024);
    CHECK(adapt.effective_batch() == 96);

    const auto chat = TrainConfig::preset(Preset::chat);
    CHECK(chat.mode == Mode::sft);
    CHECK(chat.max_length == 2048);
    CHECK(chat.total_steps == 15000);
    CHECK(chat.effective_batch() == 128);
    const auto inst = TrainConfig::preset(Preset::instruct);
    CHECK(inst.effective_batch() == 128);
    CHECK(inst.weight_decay == 0.0);
    CHECK(inst.lr_peak == 2e-5);

    CHECK(TrainConfig::from_json(chat.to_json()) == chat);
    const auto partial = TrainConfig::from_json({{"lr_peak", 1e-5}, {"seed", 9}}, inst);
    CHECK(partial.lr_peak == 1e-5);
    CHECK(partial.seed == 9);
    CHECK(partial.accum_steps == 8);
    CHECK_THROWS_AS(TrainConfig::from_json({{"learning_rate", 1.0}}), InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"warmup_ratio", 1.0}}), InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"total_steps", 0}}), InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"lr_peak", -1.0}}), InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"mode", "pretrain"}}), InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"lr_peak", "fast"}}), InvalidArgument);
}

TEST_CASE("accumulation and virtual devices match one large batch") {
    for (const bool with_adapter : {true, false}) {
        CAPTURE(with_adapter);
        const auto grouped = testing::run_accumulation_case({1, 1, 4}, with_adapter);
        const auto big = testing::run_accumulation_case({4, 1, 1}, with_adapter);
        const auto devices = testing::run_accumulation_case({1, 2, 2}, with_adapter);
        CHECK(testing::max_param_diff(grouped, big) <= 1e-10);
        CHECK(testing::max_param_diff(devices, big) <= 1e-10);
        CHECK(testing::max_param_diff(big, testing::initial_params(with_adapter)) > 1e-6);
    }
}

TEST_CASE("lora training keeps a quantized base frozen and is deterministic") {
    auto base = model::DecoderModel<float>::init(testing::small_config(16, 32), 41);
    base.quantize_projections(16, true, 4);
    const auto fp = release::model_fingerprint(base);
    const auto data = testing::random_packs(16, 24, 32, 42);

    adapters::LoraConfig lc;
    lc.r = 4;
    auto run = [&](const std::string& dir) {
        auto a = adapters::init_adapter<float>(lc, base.target_shapes(lc.targets), 43);
        TrainConfig c = testing::tiny_config(100);
        std::ostringstream log;
        TrainIo io{dir, &log, nullptr, 50};
        const auto r = train(base, &a, data, c, io);
        return std::make_pair(a, r);
    };
    const auto d1 = temp_dir("lora_a");
    const auto d2 = temp_dir("lora_b");
    const auto [a1, r1] = run(d1);
    CHECK(release::model_fingerprint(base) == fp);
    const auto [a2, r2] = run(d2);
    REQUIRE(r1.metrics.size() == 100);
    REQUIRE(r1.checkpoints.size() == 1);
    CHECK(release::read_file(r1.checkpoints[0]) == release::read_file(r2.checkpoints[0]));
    for (const auto& n : a1.order) {
        CHECK(a1.at(n).a.identical(a2.at(n).a));
        CHECK(a1.at(n).b.identical(a2.at(n).b));
    }
    CHECK(r1.metrics.back().loss < r1.metrics.front().loss);
    const auto loaded = release::Container::load(r1.checkpoints[0]);
    CHECK(release::adapter_base_fingerprint(loaded) == fp);
    CHECK(loaded.meta["train"]["step"] == 100);
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
}

TEST_CASE("metrics log and periodic checkpoints") {
    auto m = model::DecoderModel<float>::init(testing::small_config(8, 16), 51);
    const auto data = testing::random_packs(8, 12, 16, 52);
    auto c = testing::tiny_config(6);
    c.per_device_batch = 2;
    c.n_devices = 2;
    c.accum_steps = 2;
    c.checkpoint_every = 2;
    const auto dir = temp_dir("metrics");
    std::ostringstream metrics;
    const auto r = train(m, static_cast<adapters::LoraAdapter<float>*>(nullptr), data, c, {dir, &metrics});
    CHECK(r.checkpoints.size() == 3);
    CHECK(std::filesystem::exists(std::filesystem::path(dir) / "step-0000002.adfg"));
    CHECK(std::filesystem::exists(std::filesystem::path(dir) / "step-0000004.adfg"));
    CHECK(std::filesystem::exists(std::filesystem::path(dir) / "final.adfg"));
    const auto final_model = release::model_from_container<float>(release::Container::load(r.checkpoints.back()));
    CHECK(testing::bitwise_equal(final_model, m));

    std::istringstream lines(metrics.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        ++n;
        CHECK(j["step"] == n);
        CHECK(j["effective_batch"] == 8);
        CHECK(j["lr"].get<double>() == doctest::Approx(lr_at(n, c)));
        CHECK(j.contains("loss"));
        CHECK(j.contains("grad_norm"));
    }
    CHECK(n == 6);
    std::filesystem::remove_all(dir);
}

TEST_CASE("a diverging run aborts and keeps the last good checkpoint") {
    auto m = model::DecoderModel<float>::init(testing::small_config(8, 16), 61);
    const auto data = testing::random_packs(8, 12, 16, 62);
    auto c = testing::tiny_config(5);
    c.lr_peak = 1e30;
    c.checkpoint_every = 1;
    const auto dir = temp_dir("diverge");
    CHECK_THROWS_AS(train(m, static_cast<adapters::LoraAdapter<float>*>(nullptr), data, c, {dir}), NumericError);
    const auto good = std::filesystem::path(dir) / "step-0000001.adfg";
    REQUIRE(std::filesystem::exists(good));
    CHECK_FALSE(std::filesystem::exists(std::filesystem::path(dir) / "final.adfg"));
    const auto saved = release::model_from_container<float>(release::Container::load(good.string()));
    CHECK(testing::bitwise_equal(saved, m));
    std::filesystem::remove_all(dir);
}

TEST_CASE("perplexity") {
    auto m = model::DecoderModel<double>::init(testing::small_config(8, 16), 71);
    for (const auto& n : m.names()) {
        for (auto& v : m.dense(n).data()) {
            v = 0.0;
        }
    }
    const auto data = testing::random_packs(4, 10, 16, 72);
    CHECK(evaluate_perplexity<double>(m, nullptr, data) == doctest::Approx(16.0).epsilon(1e-12));

    // Memorizing one short sequence drives perplexity towards one.
    auto learner = model::DecoderModel<double>::init(testing::small_config(16, 16), 73);
    const auto one = testing::random_packs(1, 12, 16, 74);
    auto c = testing::tiny_config(150);
    c.lr_peak = 1e-2;
    c.weight_decay = 0.0;
    c.per_device_batch = 1;
    const double before = evaluate_perplexity<double>(learner, nullptr, one);
    (void)train(learner, static_cast<adapters::LoraAdapter<double>*>(nullptr), one, c);
    const double after = evaluate_perplexity<double>(learner, nullptr, one);
    CHECK(before > 5.0);
    CHECK(after < 1.1);
    CHECK(evaluate_perplexity<double>(learner, nullptr, one) == after);

    CHECK_THROWS_AS(evaluate_perplexity<double>(m, nullptr, {}), InvalidArgument);
}

TEST_CASE("segment masking ablation changes packed attention") {
    const auto m = model::DecoderModel<double>::init(testing::small_config(8, 16), 81);
    std::vector<datapipe::TokenizedExample> ex;
    Rng rng(82);
    for (int i = 0; i < 3; ++i) {
        datapipe::TokenizedExample e;
        for (int t = 0; t < 8; ++t) {
            e.ids.push_back(static_cast<std::int32_t>(rng.below(16)));
            e.mask.push_back(1);
        }
        ex.push_back(e);
    }
    const auto packs = datapipe::pack(ex, 24);
    REQUIRE(packs.size() == 1);
    const double masked = evaluate_perplexity<double>(m, nullptr, packs, true);
    const double open = evaluate_perplexity<double>(m, nullptr, packs, false);
    CHECK(masked != open);

    auto c = testing::tiny_config(3);
    c.segment_masking = false;
    auto copy = m;
    CHECK_NOTHROW(train(copy, static_cast<adapters::LoraAdapter<double>*>(nullptr), packs, c));
}

TEST_CASE("train rejects inconsistent inputs") {
    auto m = model::DecoderModel<float>::init(testing::small_config(8, 16), 91);
    auto c = testing::tiny_config(2);
    CHECK_THROWS_AS(train(m, static_cast<adapters::LoraAdapter<float>*>(nullptr), {}, c), InvalidArgument);
    auto wide = testing::random_packs(2, 8, 32, 92);
    CHECK_THROWS_AS(train(m, static_cast<adapters::LoraAdapter<float>*>(nullptr), wide, c), InvalidArgument);
    auto q = m;
    q.quantize_projections(8, false);
    const auto ok = testing::random_packs(2, 8, 16, 93);
    CHECK_THROWS_AS(train(q, static_cast<adapters::LoraAdapter<float>*>(nullptr), ok, c), InvalidArgument);
}
