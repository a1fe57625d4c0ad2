// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "adfg/numerics/tape.hpp"

namespace adfg::testing {

using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

// Builds a scalar loss on `tape` from leaves holding `inputs` (in order).
using LossBuilder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

struct GradCheck {
    double worst_relative_error = 0.0;
    std::vector<double> per_input;
};

inline double loss_value(const LossBuilder& build, const std::vector<Tensor<double>>& inputs) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) {
        vars.push_back(tape.leaf(t, false));
    }
    return tape.value(build(tape, vars))[0];
}

// Central finite differences with step h against the tape's gradients.
// The error per input is ||analytic − numeric||₂ / max(||analytic||₂, ||numeric||₂).
inline GradCheck check_gradients(const LossBuilder& build, std::vector<Tensor<double>> inputs, double h = 1e-5) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) {
        vars.push_back(tape.leaf(t, true));
    }
    const Var loss = build(tape, vars);
    tape.backward(loss);

    GradCheck result;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor<double> analytic = tape.grad_or_zeros(vars[i]);
        double diff2 = 0.0;
        double a2 = 0.0;
        double n2 = 0.0;
        for (std::size_t j = 0; j < inputs[i].numel(); ++j) {
            const double saved = inputs[i][j];
            inputs[i][j] = saved + h;
            const double up = loss_value(build, inputs);
            inputs[i][j] = saved - h;
            const double down = loss_value(build, inputs);
            inputs[i][j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            diff2 += (analytic[j] - numeric) * (analytic[j] - numeric);
            a2 += analytic[j] * analytic[j];
            n2 += numeric * numeric;
        }
        const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-300);
        const double rel = a2 == 0.0 && n2 == 0.0 ? 0.0 : std::sqrt(diff2) / denom;
        result.per_input.push_back(rel);
        result.worst_relative_error = std::max(result.worst_relative_error, rel);
    }
    return result;
}

}  // namespace adfg::testing
