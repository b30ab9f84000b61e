// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcnx/config.hpp"
#include "lcnx/ndarray.hpp"
#include "lcnx/tape.hpp"

namespace lcnx {

/// What a tensor is for; drives initialization and weight-decay eligibility.
enum class ParamRole { weight, bias, norm_weight, norm_bias, grn, lora_a, lora_b };

inline bool decays(ParamRole role) {
    return role == ParamRole::weight || role == ParamRole::lora_a || role == ParamRole::lora_b;
}

/// Name and shape of a parameter, without storage.
struct ParamSpec {
    std::string name;
    Shape shape;
    ParamRole role = ParamRole::weight;
};

template <typename T>
struct Parameter {
    std::string name;
    NdArray<T> value;
    ParamRole role = ParamRole::weight;
    bool trainable = true;
};

/// One forward (and optionally backward) pass: a tape plus the binding of
/// parameters to tape leaves.
template <typename T>
class Graph {
public:
    /// When `grad_all` is set every parameter is differentiated regardless of
    /// its trainable flag (used for gradient verification).
    explicit Graph(bool grad_all = false, std::mt19937_64* dropout_rng = nullptr)
        : grad_all_(grad_all), rng_(dropout_rng) {}

    Tape<T>& tape() noexcept { return tape_; }

    Var param(const Parameter<T>& p) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) return it->second;
        const Var v = tape_.leaf(p.value, grad_all_ || p.trainable);
        bound_.emplace(&p, v);
        return v;
    }

    Var input(NdArray<T> value, bool requires_grad = false) { return tape_.leaf(std::move(value), requires_grad); }

    /// Gradient of a bound parameter after backward, or nullptr.
    const NdArray<T>* grad(const Parameter<T>& p) const {
        auto it = bound_.find(&p);
        return it == bound_.end() ? nullptr : tape_.grad(it->second);
    }

    std::mt19937_64* dropout_rng() const noexcept { return rng_; }

private:
    Tape<T> tape_;
    std::unordered_map<const Parameter<T>*, Var> bound_;
    bool grad_all_ = false;
    std::mt19937_64* rng_ = nullptr;
};

/// Anything that maps an image batch [N, C, S, S] to logits [N, K].
template <typename T>
class Network {
public:
    virtual ~Network() = default;

    virtual Var forward(Graph<T>& graph, Var x, bool train_mode) const = 0;
    virtual std::vector<Parameter<T>*> parameters() = 0;
    virtual std::vector<const Parameter<T>*> parameters() const = 0;
    virtual const ModelConfig& config() const = 0;
    virtual const std::vector<std::string>& class_names() const = 0;
};

struct ParamCount {
    std::size_t total = 0;
    std::size_t trainable = 0;
};

template <typename T>
ParamCount count_params(const Network<T>& net) {
    ParamCount c;
    for (const auto* p : net.parameters()) {
        c.total += p->value.numel();
        if (p->trainable) c.trainable += p->value.numel();
    }
    return c;
}

/// Eval-mode logits for a batch.
template <typename T>
NdArray<T> predict_logits(const Network<T>& net, const NdArray<T>& x) {
    Graph<T> g;
    const Var out = net.forward(g, g.input(x), false);
    return g.tape().value(out);
}

} // namespace lcnx
