// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lcnx/network.hpp"
#include "lcnx/ops.hpp"

namespace lcnx::testing {

/// Mean cross-entropy of an eval-mode forward, as a plain double.
inline double model_loss(const Network<double>& net, const NdArray<double>& x, std::span<const int> labels) {
    Graph<double> g;
    const Var logits = net.forward(g, g.input(x), false);
    return g.tape().value(ops::softmax_cross_entropy(g.tape(), logits, labels))[0];
}

/// Central differences of the loss against the tape gradient on up to
/// `coords` coordinates of every parameter and of the input. Returns the
/// largest |analytic - numeric| / max(1, |numeric|).
inline double model_grad_check(Network<double>& net, const NdArray<double>& x, std::span<const int> labels,
                               std::uint64_t seed, std::size_t coords = 4, double eps = 1e-5) {
    Graph<double> g(true);
    const Var xin = g.input(x, true);
    const Var loss = ops::softmax_cross_entropy(g.tape(), net.forward(g, xin, false), labels);
    g.tape().backward(loss);

    std::mt19937_64 rng(seed);
    double worst = 0.0;
    auto probe = [&](std::span<double> values, const NdArray<double>* analytic, auto&& loss_fn) {
        std::vector<std::size_t> idx(values.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(coords, idx.size()));
        for (std::size_t i : idx) {
            const double keep = values[i];
            values[i] = keep + eps;
            const double up = loss_fn();
            values[i] = keep - eps;
            const double down = loss_fn();
            values[i] = keep;
            const double numeric = (up - down) / (2 * eps);
            const double a = analytic ? (*analytic)[i] : 0.0;
            worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
        }
    };
    for (auto* p : net.parameters()) {
        probe(p->value.data(), g.grad(*p), [&] { return model_loss(net, x, labels); });
    }
    NdArray<double> xp = x;
    probe(xp.data(), g.tape().grad(xin), [&] { return model_loss(net, xp, labels); });
    return worst;
}

/// Overwrites every parameter with U(-scale, scale) so that no gradient
/// vanishes by construction (zero GRN gains, tiny init weights).
inline void randomize(Network<double>& net, std::uint64_t seed, double scale = 0.5) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto* p : net.parameters()) {
        for (auto& v : p->value.data()) v = u(rng);
    }
}

} // namespace lcnx::testing
