// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>

#include "lcnx/ndarray.hpp"
#include "lcnx/tape.hpp"

// Differentiable primitives. Each function validates shapes, computes its
// output and records a backward closure on the tape. Instantiated for float
// and double.
namespace lcnx::ops {

inline constexpr double kNormEps = 1e-6;

/// y[..., i] = sum_j W[i, j] * x[..., j] + b[i]. Leading dims of x are flattened.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, std::optional<Var> bias = std::nullopt);

/// Cross-correlation over NCHW input with an [O, C, kh, kw] kernel.
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, std::optional<Var> bias, int stride, int pad);

/// One [kh, kw] filter per channel, kernel shape [C, 1, kh, kw], stride 1.
template <typename T>
Var depthwise_conv2d(Tape<T>& tape, Var x, Var kernel, std::optional<Var> bias, int pad);

/// Normalizes over the last axis.
template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, double eps = kNormEps);

/// Exact erf form x * Phi(x).
template <typename T>
Var gelu(Tape<T>& tape, Var x);

/// Global response normalization over channel-last input [N, H, W, C]:
/// g = ||x[n, :, :, c]||_2, s = g / (mean_c g + eps), y = gamma * x * s + beta + x.
template <typename T>
Var grn(Tape<T>& tape, Var x, Var gamma, Var beta, double eps = kNormEps);

/// [N, C, H, W] -> [N, C].
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x);

/// Mean over the batch of -log softmax(logits)[label]. Returns a scalar (shape []).
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, double factor);

/// Elementwise product with a constant array (dropout masks).
template <typename T>
Var mul_const(Tape<T>& tape, Var x, const NdArray<T>& mask);

template <typename T>
Var nchw_to_nhwc(Tape<T>& tape, Var x);

template <typename T>
Var nhwc_to_nchw(Tape<T>& tape, Var x);

template <typename T>
Var reshape(Tape<T>& tape, Var x, Shape shape);

/// sum_i x[i] * w[i] as a scalar; used to reduce outputs in gradient checks.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const NdArray<T>& weights);

/// Row-wise softmax of a [N, K] array (no tape).
template <typename T>
NdArray<T> softmax_rows(const NdArray<T>& logits);

/// Standard normal CDF.
double normal_cdf(double x);

} // namespace lcnx::ops
