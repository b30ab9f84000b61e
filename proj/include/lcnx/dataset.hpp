// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcnx/image.hpp"
#include "lcnx/ndarray.hpp"

namespace lcnx {

enum class Split { none, train, val, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct Sample {
    std::string path; ///< relative to the manifest root
    int class_id = 0;
    std::string group; ///< empty when the sample has no group key
    Split split = Split::none;
};

/// Labeled sample index of a folder-per-class tree.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> class_names;
    std::vector<Sample> samples;

    int num_classes() const { return static_cast<int>(class_names.size()); }
    /// Global indices of the samples assigned to `s`, in manifest order.
    std::vector<std::size_t> indices(Split s) const;
};

/// root/<class_name>/<file>.ppm, sorted by class then file name. An optional
/// root/groups.tsv maps "<class_name>/<file>" to a group key.
DatasetManifest scan_dataset(const std::filesystem::path& root);

/// Assigns train/val/test. Stratified per class by default; with `by_group`
/// whole groups are placed (samples without a key form their own group).
/// Classes with fewer samples than there are non-empty splits go to train
/// and produce a warning.
DatasetManifest split_dataset(DatasetManifest manifest, const std::array<double, 3>& ratios, std::uint64_t seed,
                              bool by_group, std::vector<std::string>* warnings = nullptr);

/// path \t class \t group \t split, with a header row.
void write_manifest_tsv(const DatasetManifest& manifest, const std::filesystem::path& path);

struct AugmentConfig {
    double hflip_prob = 0.5;
    double rotation_max_deg = 15.0;
    int resize = 224;
    std::array<float, 3> mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> std{0.229f, 0.224f, 0.225f};

    void validate() const;
};

/// Manifest plus a cache of decoded, resized images.
class ImageSource {
public:
    ImageSource(DatasetManifest manifest, int resize);

    const DatasetManifest& manifest() const noexcept { return manifest_; }
    int resize() const noexcept { return resize_; }

    /// [3, S, S] raw 0..255 planes after resizing.
    const NdArray<float>& resized(std::size_t index);

private:
    DatasetManifest manifest_;
    int resize_;
    std::unordered_map<std::size_t, NdArray<float>> cache_;
};

struct Batch {
    NdArray<float> images; ///< [N, 3, S, S], normalized
    std::vector<int> labels;
    std::vector<std::size_t> indices;
};

/// Decode, resize, (train mode) random flip and rotation, normalize.
/// Randomness depends only on (seed, epoch, sample index).
Batch load_batch(ImageSource& source, Split split, std::span<const std::size_t> indices,
                 const AugmentConfig& augment, bool train_mode, std::uint64_t seed, std::uint64_t epoch);

/// Deterministic 64-bit mixing of several integers.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

} // namespace lcnx
