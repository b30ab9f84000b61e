// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lcnx/image.hpp"

namespace lcnx {

/// Parameters of a synthetic pattern-classification domain.
struct SynthSpec {
    int num_classes = 4;
    int samples_per_class = 100;
    int image_size = 32;
    double palette_shift = 0.0; ///< hue rotation of the foreground/background colors, in units of pi
    double texture_shift = 0.0; ///< amplitude of a class-independent distractor texture
    std::uint64_t seed = 0;
    int group_size = 0;         ///< >0 writes groups.tsv with this many consecutive samples per group

    void validate() const;
};

/// Pattern names used as class names ("c0_hstripes", ...); at most 8.
std::vector<std::string> synth_class_names(int num_classes);

inline constexpr int kMaxSynthClasses = 8;

/// Image `index` of class `class_id`; depends only on (spec, class_id, index).
Image synth_image(const SynthSpec& spec, int class_id, std::uint64_t index);

/// Writes root/<class>/<class>_NNNNN.ppm (and groups.tsv when grouped).
/// Returns the number of images per class.
std::vector<int> synth_domain(const SynthSpec& spec, const std::filesystem::path& root);

} // namespace lcnx
