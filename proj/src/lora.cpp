// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/lora.hpp"

#include <algorithm>
#include <cmath>

#include "lcnx/ops.hpp"

namespace lcnx {

namespace {

bool is_target(const std::string& layer, const std::vector<std::string>& targets) {
    const auto dot = layer.rfind('.');
    const std::string leaf = dot == std::string::npos ? layer : layer.substr(dot + 1);
    return std::find(targets.begin(), targets.end(), leaf) != targets.end();
}

/// Linear layers of the backbone eligible for adapters, in layout order.
std::vector<ParamSpec> projection_weights(const ModelConfig& config, const std::vector<std::string>& targets) {
    std::vector<ParamSpec> out;
    const std::string suffix = ".weight";
    for (auto& spec : model_layout(config)) {
        if (spec.name.rfind("stages.", 0) != 0 || spec.shape.size() != 2) continue;
        const std::string layer = spec.name.substr(0, spec.name.size() - suffix.size());
        if (is_target(layer, targets)) out.push_back({layer, spec.shape, spec.role});
    }
    return out;
}

} // namespace

template <typename T>
LoraAdapter<T> init_adapter(std::size_t d, std::size_t k, int rank, double alpha, double dropout,
                            std::uint64_t seed, std::string target) {
    if (rank < 1 || static_cast<std::size_t>(rank) > std::min(d, k)) {
        throw ConfigError("lora: rank " + std::to_string(rank) + " must lie in [1, min(d,k)=" +
                          std::to_string(std::min(d, k)) + "]");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("lora: dropout must lie in [0, 1)");
    const std::size_t r = static_cast<std::size_t>(rank);
    LoraAdapter<T> ad;
    ad.target = target;
    ad.rank = rank;
    ad.alpha = alpha;
    ad.dropout = dropout;
    ad.a = Parameter<T>{target + ".lora_A", NdArray<T>({r, k}), ParamRole::lora_a, true};
    ad.b = Parameter<T>{target + ".lora_B", NdArray<T>({d, r}), ParamRole::lora_b, true};
    std::mt19937_64 rng(seed);
    const double bound = std::sqrt(6.0 / static_cast<double>(k));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : ad.a.value.data()) v = static_cast<T>(u(rng));
    return ad;
}

template <typename T>
Var adapted_linear(Tape<T>& tape, Var x, Var weight, Var bias, Var lora_a, Var lora_b, double scaling,
                   double dropout, bool train_mode, std::mt19937_64* rng) {
    const Var base = ops::linear(tape, x, weight, bias.valid() ? std::optional<Var>(bias) : std::nullopt);
    Var in = x;
    if (train_mode && dropout > 0.0) {
        if (!rng) throw ConfigError("adapted_linear: train-mode dropout needs a random generator");
        NdArray<T> mask(tape.value(x).shape());
        std::bernoulli_distribution keep(1.0 - dropout);
        const T kept = static_cast<T>(1.0 / (1.0 - dropout));
        for (auto& m : mask.data()) m = keep(*rng) ? kept : T{0};
        in = ops::mul_const(tape, x, mask);
    }
    Var delta = ops::linear(tape, in, lora_a);
    delta = ops::linear(tape, delta, lora_b);
    delta = ops::scale(tape, delta, scaling);
    return ops::add(tape, base, delta);
}

template <typename T>
NdArray<T> merge(const NdArray<T>& weight, const LoraAdapter<T>& adapter) {
    const auto& a = adapter.a.value;
    const auto& b = adapter.b.value;
    if (weight.rank() != 2 || weight.dim(0) != b.dim(0) || weight.dim(1) != a.dim(1)) {
        throw ShapeError("merge: weight " + shape_str(weight.shape()) + " vs adapter B " + shape_str(b.shape()) +
                         ", A " + shape_str(a.shape()));
    }
    const std::size_t d = weight.dim(0), k = weight.dim(1), r = a.dim(0);
    const double s = adapter.scaling();
    NdArray<T> out = weight;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            T acc{0};
            for (std::size_t q = 0; q < r; ++q) acc += b(i, q) * a(q, j);
            out(i, j) += static_cast<T>(s) * acc;
        }
    }
    return out;
}

template <typename T>
NdArray<T> unmerge(const NdArray<T>& merged, const LoraAdapter<T>& adapter) {
    LoraAdapter<T> neg = adapter;
    neg.alpha = -adapter.alpha;
    return merge(merged, neg);
}

std::vector<ParamSpec> lora_layout(const ModelConfig& config, const LoraConfig& lora) {
    std::vector<ParamSpec> out;
    const std::size_t r = static_cast<std::size_t>(lora.rank);
    for (const auto& w : projection_weights(config, lora.targets)) {
        out.push_back({w.name + ".lora_A", {r, w.shape[1]}, ParamRole::lora_a});
        out.push_back({w.name + ".lora_B", {w.shape[0], r}, ParamRole::lora_b});
    }
    return out;
}

template <typename T>
PeftModel<T>::PeftModel(Model<T> base, LoraConfig lora, std::vector<LoraAdapter<T>> adapters)
    : base_(std::move(base)), lora_(std::move(lora)), adapters_(std::move(adapters)) {
    for (std::size_t i = 0; i < adapters_.size(); ++i) {
        const auto& ad = adapters_[i];
        const std::string wname = ad.target + ".weight";
        if (!base_.has_param(wname)) {
            throw CompatibilityError("lora: target " + ad.target + " does not exist in the base model");
        }
        const auto& w = base_.param(wname).value;
        if (w.rank() != 2 || w.dim(0) != ad.out_features() || w.dim(1) != ad.in_features() ||
            ad.a.value.dim(0) != ad.b.value.dim(1)) {
            throw CompatibilityError("lora: adapter for " + ad.target + " does not fit weight " +
                                     shape_str(w.shape()));
        }
        if (!index_.emplace(ad.target, i).second) {
            throw CompatibilityError("lora: duplicate adapter for " + ad.target);
        }
    }
}

template <typename T>
const LoraAdapter<T>* PeftModel<T>::find_adapter(const std::string& layer) const {
    auto it = index_.find(layer);
    return it == index_.end() ? nullptr : &adapters_[it->second];
}

template <typename T>
Var PeftModel<T>::apply(Graph<T>& graph, const std::string& layer, Var x, Var weight, Var bias,
                        bool train_mode) const {
    const auto* ad = find_adapter(layer);
    if (!ad) return ops::linear(graph.tape(), x, weight, bias);
    return adapted_linear(graph.tape(), x, weight, bias, graph.param(ad->a), graph.param(ad->b), ad->scaling(),
                          ad->dropout, train_mode, graph.dropout_rng());
}

template <typename T>
std::vector<Parameter<T>*> PeftModel<T>::parameters() {
    auto out = base_.parameters();
    for (auto& ad : adapters_) {
        out.push_back(&ad.a);
        out.push_back(&ad.b);
    }
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> PeftModel<T>::parameters() const {
    auto out = std::as_const(base_).parameters();
    for (const auto& ad : adapters_) {
        out.push_back(&ad.a);
        out.push_back(&ad.b);
    }
    return out;
}

template <typename T>
Model<T> PeftModel<T>::merged() const {
    Model<T> out = base_;
    for (const auto& ad : adapters_) {
        auto& w = out.param(ad.target + ".weight");
        w.value = merge(w.value, ad);
    }
    out.set_trainable(true);
    return out;
}

template <typename T>
PeftModel<T> inject(Model<T> model, const LoraConfig& lora, std::uint64_t seed, std::optional<int> num_classes) {
    const auto targets = projection_weights(model.config(), lora.targets);
    if (targets.empty()) throw ConfigError("lora: no layer matches the requested targets");
    if (num_classes) model.reset_head(*num_classes, seed ^ 0x9e3779b97f4a7c15ULL);
    model.set_trainable(false);
    model.param("head.fc.weight").trainable = true;
    model.param("head.fc.bias").trainable = true;

    std::vector<LoraAdapter<T>> adapters;
    adapters.reserve(targets.size());
    std::uint64_t layer_seed = seed;
    for (const auto& t : targets) {
        adapters.push_back(init_adapter<T>(t.shape[0], t.shape[1], lora.rank, lora.alpha, lora.dropout, layer_seed++,
                                           t.name));
    }
    return PeftModel<T>(std::move(model), lora, std::move(adapters));
}

#define LCNX_INSTANTIATE_LORA(T)                                                                              \
    template LoraAdapter<T> init_adapter<T>(std::size_t, std::size_t, int, double, double, std::uint64_t,     \
                                            std::string);                                                     \
    template Var adapted_linear<T>(Tape<T>&, Var, Var, Var, Var, Var, double, double, bool, std::mt19937_64*); \
    template NdArray<T> merge<T>(const NdArray<T>&, const LoraAdapter<T>&);                                   \
    template NdArray<T> unmerge<T>(const NdArray<T>&, const LoraAdapter<T>&);                                 \
    template class PeftModel<T>;                                                                              \
    template PeftModel<T> inject<T>(Model<T>, const LoraConfig&, std::uint64_t, std::optional<int>);

LCNX_INSTANTIATE_LORA(float)
LCNX_INSTANTIATE_LORA(double)

} // namespace lcnx
