// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/run_config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "lcnx/error.hpp"
#include "lcnx/json_io.hpp"

namespace lcnx {

using nlohmann::json;

json default_run_config() {
    const ModelConfig m = ModelConfig::base();
    const LoraConfig l;
    const TrainConfig t;
    const AugmentConfig a;
    json lora = l;
    lora["enabled"] = true;
    return json{
        {"model", m},
        {"lora", lora},
        {"train",
         {{"lr", t.lr},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"weight_decay", t.weight_decay},
          {"epochs", t.max_epochs},
          {"batch_size", t.batch_size},
          {"patience", t.patience},
          {"seed", t.seed},
          {"freeze_backbone", false},
          {"averaging", "weighted"}}},
        {"augment",
         {{"hflip_prob", a.hflip_prob},
          {"rotation_max_deg", a.rotation_max_deg},
          {"mean", {0.485, 0.456, 0.406}},
          {"std", {0.229, 0.224, 0.225}}}},
        {"data", {{"root", ""}, {"ratios", {0.8, 0.1, 0.1}}, {"by_group", false}, {"split_seed", 0}}},
        {"init", {{"base_checkpoint", ""}, {"seed", 0}}},
        {"output_dir", "run"},
    };
}

namespace {

bool compatible(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) {
        // integers stay integers; floats accept either
        return a.is_number_float() || !b.is_number_float();
    }
    return a.type() == b.type();
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

} // namespace

void merge_config(json& base, const json& overlay, const std::string& path) {
    if (!overlay.is_object()) throw ConfigError("config: '" + (path.empty() ? "<root>" : path) + "' must be an object");
    for (const auto& [key, value] : overlay.items()) {
        const std::string kp = join(path, key);
        if (!base.contains(key)) throw ConfigError("config: unknown key '" + kp + "'");
        auto& dst = base[key];
        if (dst.is_object()) {
            merge_config(dst, value, kp);
        } else if (!compatible(dst, value)) {
            throw ConfigError("config: '" + kp + "' expects " + std::string(dst.type_name()) + ", got " +
                              value.type_name());
        } else {
            dst = value;
        }
    }
}

void set_config_value(json& config, const std::string& key_path, const std::string& text) {
    json* node = &config;
    std::stringstream ss(key_path);
    std::string part;
    while (std::getline(ss, part, '.')) {
        if (!node->is_object() || !node->contains(part)) throw ConfigError("config: unknown key '" + key_path + "'");
        node = &(*node)[part];
    }
    json value;
    if (node->is_string()) {
        value = text;
    } else if (node->is_array()) {
        const std::string body = !text.empty() && text.front() == '[' ? text : "[" + text + "]";
        value = json::parse(body, nullptr, false);
        if (value.is_discarded()) throw ConfigError("config: cannot parse list '" + text + "' for " + key_path);
        // string lists given without quotes ("fc1,fc2")
        if (!node->empty() && node->front().is_string() && text.front() != '[') {
            value = json::array();
            std::stringstream items(text);
            std::string item;
            while (std::getline(items, item, ',')) value.push_back(item);
        }
    } else {
        value = json::parse(text, nullptr, false);
        if (value.is_discarded()) throw ConfigError("config: cannot parse '" + text + "' for " + key_path);
    }
    if (!compatible(*node, value)) {
        throw ConfigError("config: '" + key_path + "' expects " + std::string(node->type_name()) + ", got '" + text +
                          "'");
    }
    if (node->is_number_float() && value.is_number()) value = value.get<double>();
    *node = value;
}

std::vector<std::string> config_leaf_paths(const json& config) {
    std::vector<std::string> out;
    std::function<void(const json&, const std::string&)> walk = [&](const json& j, const std::string& path) {
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                walk(value, join(path, key));
            } else {
                out.push_back(join(path, key));
            }
        }
    };
    walk(config, "");
    return out;
}

json load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json overlay = json::parse(in, nullptr, false);
    if (overlay.is_discarded()) throw ConfigError("config: " + path.string() + " is not valid JSON");
    json cfg = default_run_config();
    merge_config(cfg, overlay);
    return cfg;
}

ModelConfig model_settings(const json& config) {
    ModelConfig m = config.at("model").get<ModelConfig>();
    m.validate();
    return m;
}

LoraConfig lora_settings(const json& config) {
    json j = config.at("lora");
    j.erase("enabled");
    LoraConfig l = j.get<LoraConfig>();
    if (l.rank < 1) throw ConfigError("lora: rank must be >= 1");
    if (!(l.dropout >= 0 && l.dropout < 1)) throw ConfigError("lora: dropout must lie in [0, 1)");
    if (l.targets.empty()) throw ConfigError("lora: targets must not be empty");
    return l;
}

bool lora_enabled(const json& config) { return config.at("lora").at("enabled").get<bool>(); }

TrainConfig train_settings(const json& config) {
    const auto& j = config.at("train");
    TrainConfig t;
    t.lr = j.at("lr").get<double>();
    t.beta1 = j.at("beta1").get<double>();
    t.beta2 = j.at("beta2").get<double>();
    t.eps = j.at("eps").get<double>();
    t.weight_decay = j.at("weight_decay").get<double>();
    t.max_epochs = j.at("epochs").get<int>();
    t.batch_size = j.at("batch_size").get<int>();
    t.patience = j.at("patience").get<int>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.validate();
    return t;
}

AugmentConfig augment_settings(const json& config) {
    const auto& j = config.at("augment");
    AugmentConfig a;
    a.hflip_prob = j.at("hflip_prob").get<double>();
    a.rotation_max_deg = j.at("rotation_max_deg").get<double>();
    a.mean = j.at("mean").get<std::array<float, 3>>();
    a.std = j.at("std").get<std::array<float, 3>>();
    a.resize = config.at("model").at("image_size").get<int>();
    a.validate();
    return a;
}

DataSettings data_settings(const json& config) {
    const auto& j = config.at("data");
    DataSettings d;
    d.root = j.at("root").get<std::string>();
    const auto ratios = j.at("ratios").get<std::vector<double>>();
    if (ratios.size() != 3) throw ConfigError("data.ratios must have 3 entries");
    d.ratios = {ratios[0], ratios[1], ratios[2]};
    d.by_group = j.at("by_group").get<bool>();
    d.split_seed = j.at("split_seed").get<std::uint64_t>();
    return d;
}

} // namespace lcnx
