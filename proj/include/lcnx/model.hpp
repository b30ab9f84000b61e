// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcnx/config.hpp"
#include "lcnx/network.hpp"

namespace lcnx {

/// Parameter names and shapes of the backbone in canonical order:
/// stem, then per stage (downsample for stages 2-4) and blocks, then head.
std::vector<ParamSpec> model_layout(const ModelConfig& config);

/// Name of the linear layer `which` ("fc1" / "fc2") in a block.
std::string block_prefix(int stage, int block);

/// Tape handles of the ten tensors of one block.
struct BlockVars {
    Var dw_weight, dw_bias;
    Var norm_weight, norm_bias;
    Var fc1_weight, fc1_bias;
    Var grn_gamma, grn_beta;
    Var fc2_weight, fc2_bias;
};

/// Maps (x, weight, bias, "fc1"|"fc2") to the projection output.
using ProjectionFn = std::function<Var(Var x, Var weight, Var bias, const char* which)>;

/// x + fc2(grn(gelu(fc1(norm(dwconv(x)))))) on NCHW input; the MLP runs
/// channel-last. `projection` defaults to a plain linear layer.
template <typename T>
Var convnext_block(Tape<T>& tape, Var x, const BlockVars& vars, const ProjectionFn& projection = {});

/// Replaces the plain fc1/fc2 projections during a forward pass.
template <typename T>
class LinearHook {
public:
    virtual ~LinearHook() = default;
    virtual Var apply(Graph<T>& graph, const std::string& layer, Var x, Var weight, Var bias,
                      bool train_mode) const = 0;
};

/// The instantiated backbone: ordered parameters with trainable flags.
template <typename T>
class Model final : public Network<T> {
public:
    Model(ModelConfig config, std::vector<Parameter<T>> params, std::vector<std::string> class_names = {});

    Var forward(Graph<T>& graph, Var x, bool train_mode) const override {
        return forward_with(graph, x, train_mode, nullptr);
    }
    Var forward_with(Graph<T>& graph, Var x, bool train_mode, const LinearHook<T>* hook) const;

    std::vector<Parameter<T>*> parameters() override;
    std::vector<const Parameter<T>*> parameters() const override;
    const ModelConfig& config() const override { return config_; }
    const std::vector<std::string>& class_names() const override { return class_names_; }

    void set_class_names(std::vector<std::string> names);
    bool has_param(const std::string& name) const { return index_.count(name) != 0; }
    Parameter<T>& param(const std::string& name);
    const Parameter<T>& param(const std::string& name) const;

    void set_trainable(bool trainable);

    /// Replaces the classification head with a freshly initialized one for
    /// `num_classes` outputs (weights trunc-normal 0.02, bias zero).
    void reset_head(int num_classes, std::uint64_t seed);

    template <typename U>
    Model<U> cast() const {
        std::vector<Parameter<U>> ps;
        ps.reserve(params_.size());
        for (const auto& p : params_) ps.push_back({p.name, p.value.template cast<U>(), p.role, p.trainable});
        return Model<U>(config_, std::move(ps), class_names_);
    }

private:
    Var bind(Graph<T>& graph, const std::string& name) const { return graph.param(param(name)); }
    Var channels_first_norm(Graph<T>& graph, Var x, const std::string& prefix) const;

    ModelConfig config_;
    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::string> class_names_;
};

/// Deterministic initialization: trunc-normal(0.02) weights, zero biases,
/// unit norm gains, zero GRN gamma/beta. All parameters trainable.
template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed);

/// Fills `out` with N(0, std) samples truncated to +-2 std.
template <typename T>
void trunc_normal_fill(NdArray<T>& out, double stddev, std::mt19937_64& rng);

/// |d logit[class] / d pixel|, max over channels, min-max scaled to [0, 1].
/// image is [C, H, W]; the result is [H, W]. An identically zero gradient
/// gives an all-zero map; a constant non-zero gradient gives all ones.
template <typename T>
NdArray<T> saliency(const Network<T>& net, const NdArray<T>& image, int class_idx);

} // namespace lcnx
