// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#include "adfg/numerics/tape.hpp"

#include <atomic>

#include "adfg/numerics/ops.hpp"

namespace adfg::numerics {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

std::string_view to_string(DType dtype) {
    switch (dtype) {
        case DType::f32:
            return "f32";
        case DType::f64:
            return "f64";
    }
    return "?";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (const auto e : shape) {
        n *= e;
    }
    return shape.empty() ? 0 : n;
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

template <typename T>
Tape<T>::Tape() : id_(next_tape_id.fetch_add(1)) {}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value) {
    const bool rg = value.requires_grad();
    return leaf(std::move(value), rg);
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    if (backward_done_) {
        throw TapeError("cannot record on a tape after backward(); call reset() first");
    }
    ensure_finite(value, "leaf");
    nodes_.push_back(Node{std::move(value), std::nullopt, {}, requires_grad});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1), id_};
}

template <typename T>
Var Tape<T>::record(const char* name, Tensor<T> value, const std::vector<Var>& inputs, Backward backward) {
    if (backward_done_) {
        throw TapeError("cannot record on a tape after backward(); call reset() first");
    }
    ensure_finite(value, name);
    bool rg = false;
    for (const Var in : inputs) {
        rg = rg || node(in).requires_grad;
    }
    nodes_.push_back(Node{std::move(value), std::nullopt, rg ? std::move(backward) : Backward{}, rg});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1), id_};
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
    if (v.tape_id != id_ || v.index >= nodes_.size()) {
        throw TapeError("variable does not belong to this tape");
    }
    return nodes_[v.index];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (v.tape_id != id_ || v.index >= nodes_.size()) {
        throw TapeError("variable does not belong to this tape");
    }
    return nodes_[v.index];
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
    return node(v).value;
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
    return node(v).requires_grad;
}

template <typename T>
const Tensor<T>* Tape<T>::grad(Var v) const {
    const auto& n = node(v);
    return n.grad ? &*n.grad : nullptr;
}

template <typename T>
Tensor<T> Tape<T>::grad_or_zeros(Var v) const {
    const auto& n = node(v);
    return n.grad ? *n.grad : Tensor<T>::zeros(n.value.shape());
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var v) {
    auto& n = node(v);
    if (!n.grad) {
        n.grad = Tensor<T>::zeros(n.value.shape());
    }
    return *n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
    if (backward_done_) {
        throw TapeError("backward() already ran on this tape; reset() before reuse");
    }
    if (loss.tape_id != id_ || loss.index >= nodes_.size()) {
        throw TapeError("loss was not produced on this tape");
    }
    auto& root = nodes_[loss.index];
    if (root.value.numel() != 1) {
        throw TapeError("backward() requires a scalar loss, got shape " + shape_string(root.value.shape()));
    }
    if (!root.requires_grad) {
        throw TapeError("loss does not depend on any tensor that requires gradients");
    }
    backward_done_ = true;
    root.grad = Tensor<T>::full(root.value.shape(), T{1});
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.backward && n.grad) {
            n.backward(*this, *n.grad);
        }
    }
}

template <typename T>
void Tape<T>::reset() {
    nodes_.clear();
    backward_done_ = false;
    id_ = next_tape_id.fetch_add(1);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace adfg::numerics
