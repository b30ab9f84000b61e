// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/json_io.hpp"

namespace lcnx {

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"depths", c.depths},           {"dims", c.dims},
                       {"num_classes", c.num_classes}, {"in_channels", c.in_channels},
                       {"image_size", c.image_size},   {"mlp_ratio", c.mlp_ratio}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("depths").get_to(c.depths);
    j.at("dims").get_to(c.dims);
    j.at("num_classes").get_to(c.num_classes);
    j.at("in_channels").get_to(c.in_channels);
    j.at("image_size").get_to(c.image_size);
    j.at("mlp_ratio").get_to(c.mlp_ratio);
}

void to_json(nlohmann::json& j, const LoraConfig& c) {
    j = nlohmann::json{{"rank", c.rank}, {"alpha", c.alpha}, {"dropout", c.dropout}, {"targets", c.targets}};
}

void from_json(const nlohmann::json& j, LoraConfig& c) {
    j.at("rank").get_to(c.rank);
    j.at("alpha").get_to(c.alpha);
    j.at("dropout").get_to(c.dropout);
    j.at("targets").get_to(c.targets);
}

} // namespace lcnx
