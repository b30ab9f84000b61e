// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/config.hpp"

#include <algorithm>

#include "lcnx/error.hpp"

namespace lcnx {

void ModelConfig::validate() const {
    if (depths.size() != 4 || dims.size() != 4) {
        throw ConfigError("model config: depths and dims need exactly 4 entries (got " +
                          std::to_string(depths.size()) + " and " + std::to_string(dims.size()) + ")");
    }
    auto positive = [](int v) { return v > 0; };
    if (!std::all_of(depths.begin(), depths.end(), positive) || !std::all_of(dims.begin(), dims.end(), positive)) {
        throw ConfigError("model config: depths and dims must be positive");
    }
    if (num_classes < 1 || in_channels < 1 || mlp_ratio < 1) {
        throw ConfigError("model config: num_classes, in_channels and mlp_ratio must be positive");
    }
    // stem /4, then three /2 downsamples; stage 4 must keep at least one pixel
    if (image_size < 32 || image_size % 32 != 0) {
        throw ConfigError("model config: image_size must be a positive multiple of 32, got " +
                          std::to_string(image_size));
    }
}

int ModelConfig::stage_resolution(int stage) const { return (image_size / 4) >> stage; }

bool ModelConfig::same_backbone(const ModelConfig& other) const {
    return depths == other.depths && dims == other.dims && in_channels == other.in_channels &&
           mlp_ratio == other.mlp_ratio;
}

ModelConfig ModelConfig::base(int num_classes) {
    ModelConfig c;
    c.num_classes = num_classes;
    return c;
}

ModelConfig ModelConfig::tiny(int num_classes) {
    ModelConfig c;
    c.depths = {3, 3, 9, 3};
    c.dims = {96, 192, 384, 768};
    c.num_classes = num_classes;
    return c;
}

ModelConfig ModelConfig::toy(int num_classes) {
    ModelConfig c;
    c.depths = {1, 1, 1, 1};
    c.dims = {8, 16, 32, 64};
    c.num_classes = num_classes;
    c.image_size = 32;
    return c;
}

} // namespace lcnx
