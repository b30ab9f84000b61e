// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcnx/config.hpp"
#include "lcnx/dataset.hpp"
#include "lcnx/trainer.hpp"

namespace lcnx {

/// Every configurable key with its default value. Sections: model, lora,
/// train, augment, data, init, plus the top-level output_dir.
nlohmann::json default_run_config();

/// Overlays `overlay` onto `base`. Keys absent from `base` and type changes
/// throw ConfigError naming the key path.
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path = "");

/// Sets the leaf at a dotted key path ("train.lr") from its command-line
/// spelling. Lists accept "1,2,3" or JSON.
void set_config_value(nlohmann::json& config, const std::string& key_path, const std::string& text);

/// Dotted paths of every leaf, in document order.
std::vector<std::string> config_leaf_paths(const nlohmann::json& config);

nlohmann::json load_run_config(const std::filesystem::path& path);

struct DataSettings {
    std::filesystem::path root;
    std::array<double, 3> ratios{0.8, 0.1, 0.1};
    bool by_group = false;
    std::uint64_t split_seed = 0;
};

/// Typed views; each validates its section.
ModelConfig model_settings(const nlohmann::json& config);
LoraConfig lora_settings(const nlohmann::json& config);
bool lora_enabled(const nlohmann::json& config);
TrainConfig train_settings(const nlohmann::json& config);
AugmentConfig augment_settings(const nlohmann::json& config);
DataSettings data_settings(const nlohmann::json& config);

} // namespace lcnx
