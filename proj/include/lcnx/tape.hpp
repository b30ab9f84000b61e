// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lcnx/ndarray.hpp"

namespace lcnx {

/// Handle to a value recorded on a Tape.
struct Var {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t id = npos;

    bool valid() const noexcept { return id != npos; }
    friend bool operator==(Var, Var) = default;
};

/// Reverse-mode recording of executed primitives.
///
/// Every primitive appends one node holding its output value and a closure
/// that maps the output gradient onto the gradients of its parents.
/// backward() replays the closures in reverse recording order, each at most
/// once; gradients of values with several consumers are summed.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const NdArray<T>& grad_out)>;

    Var leaf(NdArray<T> value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, {}, "leaf"});
        return Var{nodes_.size() - 1};
    }

    /// Records the output of a primitive. The closure is kept only when at
    /// least one parent participates in differentiation.
    Var record(const char* op, NdArray<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
        if (!value.all_finite()) {
            throw NumericError(std::string("non-finite output from ") + op);
        }
        bool needs = false;
        for (Var p : parents) {
            needs = needs || (p.valid() && nodes_.at(p.id).requires_grad);
        }
        nodes_.push_back(Node{std::move(value), std::nullopt, needs, needs ? std::move(fn) : BackwardFn{}, op});
        return Var{nodes_.size() - 1};
    }

    const NdArray<T>& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return v.valid() && nodes_.at(v.id).requires_grad; }
    const char* op_name(Var v) const { return nodes_.at(v.id).op; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient accumulated by the last backward pass, or nullptr if none reached v.
    const NdArray<T>* grad(Var v) const {
        const auto& g = nodes_.at(v.id).grad;
        return g ? &*g : nullptr;
    }

    void accumulate(Var v, const NdArray<T>& g) {
        auto& node = nodes_.at(v.id);
        if (!node.requires_grad) {
            return;
        }
        if (g.shape() != node.value.shape()) {
            throw ShapeError(std::string("gradient shape mismatch at ") + node.op);
        }
        if (!node.grad) {
            node.grad = g;
            return;
        }
        auto dst = node.grad->data();
        auto src = g.data();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] += src[i];
        }
    }

    /// Runs the backward pass from `out` seeded with `seed` (same shape as out).
    void backward(Var out, const NdArray<T>& seed) {
        for (auto& n : nodes_) {
            n.grad.reset();
        }
        visited_.clear();
        accumulate(out, seed);
        for (std::size_t i = out.id + 1; i-- > 0;) {
            auto& node = nodes_[i];
            if (!node.backward || !node.grad) {
                continue;
            }
            visited_.push_back(i);
            // Closures only touch strictly earlier nodes, so this reference stays valid.
            node.backward(*this, *node.grad);
        }
    }

    /// Scalar output convenience: seeds with 1.
    void backward(Var out) { backward(out, NdArray<T>(value(out).shape(), T{1})); }

    /// Node ids whose backward closure ran during the last pass, in execution order.
    const std::vector<std::size_t>& last_backward_visits() const noexcept { return visited_; }

private:
    struct Node {
        NdArray<T> value;
        std::optional<NdArray<T>> grad;
        bool requires_grad = false;
        BackwardFn backward;
        const char* op = "";
    };

    std::vector<Node> nodes_;
    std::vector<std::size_t> visited_;
};

} // namespace lcnx
