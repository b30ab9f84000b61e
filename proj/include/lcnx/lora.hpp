// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcnx/config.hpp"
#include "lcnx/model.hpp"

namespace lcnx {

/// Low-rank delta (alpha / r) * B A attached to a frozen [d, k] weight.
template <typename T>
struct LoraAdapter {
    std::string target; ///< linear layer name, e.g. "stages.2.blocks.5.fc1"
    Parameter<T> a;     ///< [r, k]
    Parameter<T> b;     ///< [d, r]
    int rank = 1;
    double alpha = 1.0;
    double dropout = 0.0;

    double scaling() const { return alpha / rank; }
    std::size_t out_features() const { return b.value.dim(0); }
    std::size_t in_features() const { return a.value.dim(1); }
};

/// A ~ U(-sqrt(6/k), sqrt(6/k)), B = 0. Throws ConfigError if r > min(d, k).
template <typename T>
LoraAdapter<T> init_adapter(std::size_t d, std::size_t k, int rank, double alpha, double dropout,
                            std::uint64_t seed, std::string target = {});

/// base_linear(x, W, b) + (alpha / r) * (drop(x) A^T) B^T. Dropout (inverted
/// scaling) is applied to the adapter input only, and only in train mode;
/// `rng` must then be provided.
template <typename T>
Var adapted_linear(Tape<T>& tape, Var x, Var weight, Var bias, Var lora_a, Var lora_b, double scaling,
                   double dropout, bool train_mode, std::mt19937_64* rng);

/// W + (alpha / r) * B A.
template <typename T>
NdArray<T> merge(const NdArray<T>& weight, const LoraAdapter<T>& adapter);

/// W' - (alpha / r) * B A.
template <typename T>
NdArray<T> unmerge(const NdArray<T>& merged, const LoraAdapter<T>& adapter);

/// Adapter parameter layout for `config` (names and shapes only).
std::vector<ParamSpec> lora_layout(const ModelConfig& config, const LoraConfig& lora);

/// Backbone with adapters on its projection layers. Base tensors are frozen
/// except the classification head.
template <typename T>
class PeftModel final : public Network<T>, private LinearHook<T> {
public:
    PeftModel(Model<T> base, LoraConfig lora, std::vector<LoraAdapter<T>> adapters);

    Var forward(Graph<T>& graph, Var x, bool train_mode) const override {
        return base_.forward_with(graph, x, train_mode, this);
    }

    std::vector<Parameter<T>*> parameters() override;
    std::vector<const Parameter<T>*> parameters() const override;
    const ModelConfig& config() const override { return base_.config(); }
    const std::vector<std::string>& class_names() const override { return base_.class_names(); }

    Model<T>& base() noexcept { return base_; }
    const Model<T>& base() const noexcept { return base_; }
    const LoraConfig& lora_config() const noexcept { return lora_; }
    std::vector<LoraAdapter<T>>& adapters() noexcept { return adapters_; }
    const std::vector<LoraAdapter<T>>& adapters() const noexcept { return adapters_; }
    const LoraAdapter<T>* find_adapter(const std::string& layer) const;

    /// Plain backbone with every delta folded into its weight.
    Model<T> merged() const;

private:
    Var apply(Graph<T>& graph, const std::string& layer, Var x, Var weight, Var bias,
              bool train_mode) const override;

    Model<T> base_;
    LoraConfig lora_;
    std::vector<LoraAdapter<T>> adapters_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Attaches one adapter per block projection whose short name ("fc1", "fc2")
/// is in lora.targets. Freezes the base; the head stays trainable and is
/// re-initialized when `num_classes` is given.
template <typename T>
PeftModel<T> inject(Model<T> model, const LoraConfig& lora, std::uint64_t seed,
                    std::optional<int> num_classes = std::nullopt);

} // namespace lcnx
