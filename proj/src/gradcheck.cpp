// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lcnx/ops.hpp"

namespace lcnx {

namespace {

double evaluate(const DiffFn& f, const std::vector<NdArray<double>>& inputs, const NdArray<double>* weights,
                NdArray<double>* weights_out, std::uint64_t seed) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.leaf(in, false));
    const Var out = f(tape, vars);
    const auto& ov = tape.value(out);
    if (!ov.all_finite()) throw NumericError("grad_check: non-finite output");
    if (weights_out) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        *weights_out = NdArray<double>(ov.shape());
        for (auto& w : weights_out->data()) w = u(rng);
        weights = weights_out;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < ov.numel(); ++i) acc += ov[i] * (*weights)[i];
    return acc;
}

} // namespace

double grad_check(const DiffFn& f, const std::vector<NdArray<double>>& inputs, double eps, std::uint64_t seed) {
    for (const auto& in : inputs) {
        if (!in.all_finite()) throw NumericError("grad_check: non-finite input");
    }

    NdArray<double> weights;
    evaluate(f, inputs, nullptr, &weights, seed);

    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
    const Var out = f(tape, vars);
    const Var scalar = ops::weighted_sum(tape, out, weights);
    tape.backward(scalar);

    double worst = 0.0;
    auto perturbed = inputs;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        const NdArray<double>* analytic = tape.grad(vars[a]);
        for (std::size_t i = 0; i < inputs[a].numel(); ++i) {
            const double orig = inputs[a][i];
            perturbed[a][i] = orig + eps;
            const double up = evaluate(f, perturbed, &weights, nullptr, seed);
            perturbed[a][i] = orig - eps;
            const double down = evaluate(f, perturbed, &weights, nullptr, seed);
            perturbed[a][i] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double an = analytic ? (*analytic)[i] : 0.0;
            if (!std::isfinite(numeric) || !std::isfinite(an)) {
                throw NumericError("grad_check: non-finite gradient");
            }
            worst = std::max(worst, std::abs(an - numeric) / std::max(1.0, std::abs(numeric)));
        }
    }
    return worst;
}

} // namespace lcnx
