// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lcnx/ndarray.hpp"
#include "lcnx/tape.hpp"

namespace lcnx {

/// A differentiable function of several inputs, built on a fresh tape.
using DiffFn = std::function<Var(Tape<double>&, std::span<const Var>)>;

/// Compares reverse-mode gradients against central differences.
///
/// Non-scalar outputs are reduced with fixed pseudo-random weights drawn from
/// `seed`, so every output coordinate contributes. Returns the maximum over
/// all input coordinates of |analytic - numeric| / max(1, |numeric|).
double grad_check(const DiffFn& f, const std::vector<NdArray<double>>& inputs, double eps = 1e-5,
                  std::uint64_t seed = 0);

} // namespace lcnx
