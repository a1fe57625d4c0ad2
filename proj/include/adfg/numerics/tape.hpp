// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adfg/numerics/tensor.hpp"

namespace adfg::numerics {

// Handle to a value recorded on a Tape.
struct Var {
    std::uint32_t index = UINT32_MAX;
    std::uint64_t tape_id = 0;

    [[nodiscard]] bool valid() const noexcept { return index != UINT32_MAX; }
};

// Reverse-mode tape. Operations are appended in evaluation order; backward()
// walks them in exact reverse order, so gradient summation order is fixed.
// A tape is single-threaded and must not be shared.
template <typename T>
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) noexcept = default;
    Tape& operator=(Tape&&) noexcept = default;

    // Records an input. Gradients are tracked when value.requires_grad() is set.
    Var leaf(Tensor<T> value);
    Var leaf(Tensor<T> value, bool requires_grad);
    Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

    // Appends the result of an operation. `name` is used in error messages.
    Var record(const char* name, Tensor<T> value, const std::vector<Var>& inputs, Backward backward);

    [[nodiscard]] const Tensor<T>& value(Var v) const;
    [[nodiscard]] bool requires_grad(Var v) const;
    [[nodiscard]] const Tensor<T>* grad(Var v) const;
    [[nodiscard]] Tensor<T> grad_or_zeros(Var v) const;

    // Gradient buffer of v, allocated as zeros on first use. Only for backward rules.
    Tensor<T>& grad_buffer(Var v);

    // Populates gradients of every requires_grad node w.r.t. the scalar `loss`.
    void backward(Var loss);

    // Drops every node and gradient; the tape can be reused afterwards.
    void reset();

    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] std::uint64_t id() const noexcept { return id_; }

private:
    struct Node {
        Tensor<T> value;
        std::optional<Tensor<T>> grad;
        Backward backward;
        bool requires_grad = false;
    };

    Node& node(Var v);
    const Node& node(Var v) const;

    std::uint64_t id_;
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace adfg::numerics
