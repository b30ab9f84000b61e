// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lcnx/ops.hpp"

namespace lcnx {

namespace {

constexpr std::size_t kStemPatch = 4;
constexpr std::size_t kDwKernel = 7;
constexpr double kInitStd = 0.02;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

} // namespace

std::string block_prefix(int stage, int block) {
    return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block);
}

std::vector<ParamSpec> model_layout(const ModelConfig& config) {
    config.validate();
    std::vector<ParamSpec> out;
    const auto& dims = config.dims;
    const std::size_t d0 = sz(dims[0]);
    out.push_back({"stem.conv.weight", {d0, sz(config.in_channels), kStemPatch, kStemPatch}, ParamRole::weight});
    out.push_back({"stem.conv.bias", {d0}, ParamRole::bias});
    out.push_back({"stem.norm.weight", {d0}, ParamRole::norm_weight});
    out.push_back({"stem.norm.bias", {d0}, ParamRole::norm_bias});
    for (int s = 0; s < 4; ++s) {
        const std::size_t d = sz(dims[sz(s)]);
        const std::string stage = "stages." + std::to_string(s);
        if (s > 0) {
            const std::size_t prev = sz(dims[sz(s - 1)]);
            out.push_back({stage + ".downsample.norm.weight", {prev}, ParamRole::norm_weight});
            out.push_back({stage + ".downsample.norm.bias", {prev}, ParamRole::norm_bias});
            out.push_back({stage + ".downsample.conv.weight", {d, prev, 2, 2}, ParamRole::weight});
            out.push_back({stage + ".downsample.conv.bias", {d}, ParamRole::bias});
        }
        const std::size_t hidden = d * sz(config.mlp_ratio);
        for (int b = 0; b < config.depths[sz(s)]; ++b) {
            const std::string p = block_prefix(s, b);
            out.push_back({p + ".dwconv.weight", {d, 1, kDwKernel, kDwKernel}, ParamRole::weight});
            out.push_back({p + ".dwconv.bias", {d}, ParamRole::bias});
            out.push_back({p + ".norm.weight", {d}, ParamRole::norm_weight});
            out.push_back({p + ".norm.bias", {d}, ParamRole::norm_bias});
            out.push_back({p + ".fc1.weight", {hidden, d}, ParamRole::weight});
            out.push_back({p + ".fc1.bias", {hidden}, ParamRole::bias});
            out.push_back({p + ".grn.gamma", {hidden}, ParamRole::grn});
            out.push_back({p + ".grn.beta", {hidden}, ParamRole::grn});
            out.push_back({p + ".fc2.weight", {d, hidden}, ParamRole::weight});
            out.push_back({p + ".fc2.bias", {d}, ParamRole::bias});
        }
    }
    const std::size_t d3 = sz(dims[3]);
    out.push_back({"head.norm.weight", {d3}, ParamRole::norm_weight});
    out.push_back({"head.norm.bias", {d3}, ParamRole::norm_bias});
    out.push_back({"head.fc.weight", {sz(config.num_classes), d3}, ParamRole::weight});
    out.push_back({"head.fc.bias", {sz(config.num_classes)}, ParamRole::bias});
    return out;
}

template <typename T>
Var convnext_block(Tape<T>& tape, Var x, const BlockVars& v, const ProjectionFn& projection) {
    const auto project = [&](Var in, Var w, Var b, const char* which) {
        return projection ? projection(in, w, b, which) : ops::linear(tape, in, w, b);
    };
    Var h = ops::depthwise_conv2d(tape, x, v.dw_weight, v.dw_bias, static_cast<int>(kDwKernel / 2));
    h = ops::nchw_to_nhwc(tape, h);
    h = ops::layer_norm(tape, h, v.norm_weight, v.norm_bias);
    h = project(h, v.fc1_weight, v.fc1_bias, "fc1");
    h = ops::gelu(tape, h);
    h = ops::grn(tape, h, v.grn_gamma, v.grn_beta);
    h = project(h, v.fc2_weight, v.fc2_bias, "fc2");
    h = ops::nhwc_to_nchw(tape, h);
    return ops::add(tape, x, h);
}

template <typename T>
Model<T>::Model(ModelConfig config, std::vector<Parameter<T>> params, std::vector<std::string> class_names)
    : config_(std::move(config)), params_(std::move(params)), class_names_(std::move(class_names)) {
    config_.validate();
    const auto layout = model_layout(config_);
    if (layout.size() != params_.size()) {
        throw CompatibilityError("model: expected " + std::to_string(layout.size()) + " tensors, got " +
                                 std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name != layout[i].name || params_[i].value.shape() != layout[i].shape) {
            throw CompatibilityError("model: tensor " + params_[i].name + " " + shape_str(params_[i].value.shape()) +
                                     " does not match layout " + layout[i].name + " " +
                                     shape_str(layout[i].shape));
        }
        params_[i].role = layout[i].role;
        index_.emplace(params_[i].name, i);
    }
    set_class_names(std::move(class_names_));
}

template <typename T>
void Model<T>::set_class_names(std::vector<std::string> names) {
    if (!names.empty() && names.size() != static_cast<std::size_t>(config_.num_classes)) {
        throw ConfigError("model: " + std::to_string(names.size()) + " class names for " +
                          std::to_string(config_.num_classes) + " classes");
    }
    class_names_ = std::move(names);
}

template <typename T>
Parameter<T>& Model<T>::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model: no parameter named " + name);
    return params_[it->second];
}

template <typename T>
const Parameter<T>& Model<T>::param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model: no parameter named " + name);
    return params_[it->second];
}

template <typename T>
std::vector<Parameter<T>*> Model<T>::parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> Model<T>::parameters() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

template <typename T>
void Model<T>::set_trainable(bool trainable) {
    for (auto& p : params_) p.trainable = trainable;
}

template <typename T>
void Model<T>::reset_head(int num_classes, std::uint64_t seed) {
    if (num_classes < 1) throw ConfigError("reset_head: num_classes must be positive");
    config_.num_classes = num_classes;
    std::mt19937_64 rng(seed);
    auto& w = param("head.fc.weight");
    w.value = NdArray<T>({sz(num_classes), sz(config_.dims[3])});
    trunc_normal_fill(w.value, kInitStd, rng);
    w.trainable = true;
    auto& b = param("head.fc.bias");
    b.value = NdArray<T>({sz(num_classes)});
    b.trainable = true;
    if (class_names_.size() != sz(num_classes)) class_names_.clear();
}

template <typename T>
Var Model<T>::channels_first_norm(Graph<T>& graph, Var x, const std::string& prefix) const {
    auto& tape = graph.tape();
    Var h = ops::nchw_to_nhwc(tape, x);
    h = ops::layer_norm(tape, h, bind(graph, prefix + ".weight"), bind(graph, prefix + ".bias"));
    return ops::nhwc_to_nchw(tape, h);
}

template <typename T>
Var Model<T>::forward_with(Graph<T>& graph, Var x, bool train_mode, const LinearHook<T>* hook) const {
    auto& tape = graph.tape();
    const auto& in = tape.value(x);
    const std::size_t s = sz(config_.image_size);
    if (in.rank() != 4 || in.dim(1) != sz(config_.in_channels) || in.dim(2) != s || in.dim(3) != s) {
        throw ShapeError("forward: expected [N," + std::to_string(config_.in_channels) + "," + std::to_string(s) +
                         "," + std::to_string(s) + "] input, got " + shape_str(in.shape()));
    }

    Var h = ops::conv2d(tape, x, bind(graph, "stem.conv.weight"), bind(graph, "stem.conv.bias"),
                        static_cast<int>(kStemPatch), 0);
    h = channels_first_norm(graph, h, "stem.norm");

    for (int st = 0; st < 4; ++st) {
        const std::string stage = "stages." + std::to_string(st);
        if (st > 0) {
            h = channels_first_norm(graph, h, stage + ".downsample.norm");
            h = ops::conv2d(tape, h, bind(graph, stage + ".downsample.conv.weight"),
                            bind(graph, stage + ".downsample.conv.bias"), 2, 0);
        }
        for (int b = 0; b < config_.depths[sz(st)]; ++b) {
            const std::string p = block_prefix(st, b);
            BlockVars v{bind(graph, p + ".dwconv.weight"), bind(graph, p + ".dwconv.bias"),
                        bind(graph, p + ".norm.weight"),   bind(graph, p + ".norm.bias"),
                        bind(graph, p + ".fc1.weight"),    bind(graph, p + ".fc1.bias"),
                        bind(graph, p + ".grn.gamma"),     bind(graph, p + ".grn.beta"),
                        bind(graph, p + ".fc2.weight"),    bind(graph, p + ".fc2.bias")};
            ProjectionFn proj;
            if (hook) {
                proj = [&](Var in_x, Var w, Var bias, const char* which) {
                    return hook->apply(graph, p + "." + which, in_x, w, bias, train_mode);
                };
            }
            h = convnext_block(tape, h, v, proj);
        }
    }

    h = ops::global_avg_pool(tape, h);
    h = ops::layer_norm(tape, h, bind(graph, "head.norm.weight"), bind(graph, "head.norm.bias"));
    return ops::linear(tape, h, bind(graph, "head.fc.weight"), bind(graph, "head.fc.bias"));
}

template <typename T>
void trunc_normal_fill(NdArray<T>& out, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : out.data()) {
        double s = dist(rng);
        while (std::abs(s) > 2.0 * stddev) s = dist(rng);
        v = static_cast<T>(s);
    }
}

template <typename T>
Model<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    const auto layout = model_layout(config);
    std::mt19937_64 rng(seed);
    std::vector<Parameter<T>> params;
    params.reserve(layout.size());
    for (const auto& spec : layout) {
        Parameter<T> p{spec.name, NdArray<T>(spec.shape), spec.role, true};
        switch (spec.role) {
        case ParamRole::weight:
            trunc_normal_fill(p.value, kInitStd, rng);
            break;
        case ParamRole::norm_weight:
            p.value.fill(T{1});
            break;
        default:
            break;
        }
        params.push_back(std::move(p));
    }
    return Model<T>(config, std::move(params));
}

template <typename T>
NdArray<T> saliency(const Network<T>& net, const NdArray<T>& image, int class_idx) {
    if (image.rank() != 3) throw ShapeError("saliency: expected [C,H,W] image, got " + shape_str(image.shape()));
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Graph<T> graph;
    const Var x = graph.input(image.reshaped({1, c, h, w}), true);
    const Var logits = net.forward(graph, x, false);
    const auto& lv = graph.tape().value(logits);
    if (class_idx < 0 || sz(class_idx) >= lv.dim(1)) {
        throw ConfigError("saliency: class " + std::to_string(class_idx) + " out of range [0," +
                          std::to_string(lv.dim(1)) + ")");
    }
    NdArray<T> seed(lv.shape());
    seed(0, class_idx) = T{1};
    graph.tape().backward(logits, seed);

    NdArray<T> map({h, w});
    if (const auto* gx = graph.tape().grad(x)) {
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < h * w; ++i) map[i] = std::max(map[i], std::abs((*gx)[ch * h * w + i]));
    }
    const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
    const T mn = *lo, mx = *hi;
    if (mx == T{0}) return map;
    if (mx == mn) {
        map.fill(T{1});
        return map;
    }
    for (auto& v : map.data()) v = (v - mn) / (mx - mn);
    return map;
}

template class Model<float>;
template class Model<double>;
template Var convnext_block<float>(Tape<float>&, Var, const BlockVars&, const ProjectionFn&);
template Var convnext_block<double>(Tape<double>&, Var, const BlockVars&, const ProjectionFn&);
template Model<float> build_model<float>(const ModelConfig&, std::uint64_t);
template Model<double> build_model<double>(const ModelConfig&, std::uint64_t);
template void trunc_normal_fill<float>(NdArray<float>&, double, std::mt19937_64&);
template void trunc_normal_fill<double>(NdArray<double>&, double, std::mt19937_64&);
template NdArray<float> saliency<float>(const Network<float>&, const NdArray<float>&, int);
template NdArray<double> saliency<double>(const Network<double>&, const NdArray<double>&, int);

} // namespace lcnx
