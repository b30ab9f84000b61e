// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lcnx {

/// Architecture hyperparameters of the four-stage backbone.
struct ModelConfig {
    std::vector<int> depths{3, 3, 27, 3};
    std::vector<int> dims{128, 256, 512, 1024};
    int num_classes = 1000;
    int in_channels = 3;
    int image_size = 224;
    int mlp_ratio = 4;

    /// Throws ConfigError when the configuration cannot be instantiated.
    void validate() const;

    /// Spatial side length entering stage `stage` (0-based).
    int stage_resolution(int stage) const;

    /// Same backbone shape (everything except the class count).
    bool same_backbone(const ModelConfig& other) const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

    static ModelConfig base(int num_classes = 1000);
    static ModelConfig tiny(int num_classes = 1000);
    /// depths [1,1,1,1], dims [8,16,32,64], 32x32 inputs.
    static ModelConfig toy(int num_classes = 4);
};

/// Adapter hyperparameters.
struct LoraConfig {
    int rank = 16;
    double alpha = 32.0;
    double dropout = 0.1;
    std::vector<std::string> targets{"fc1", "fc2"};

    double scaling() const { return alpha / rank; }
    friend bool operator==(const LoraConfig&, const LoraConfig&) = default;
};

} // namespace lcnx
