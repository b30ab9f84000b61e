// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "lcnx/error.hpp"

namespace lcnx {

namespace fs = std::filesystem;

std::string to_string(Split s) {
    switch (s) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    case Split::test:
        return "test";
    case Split::none:
        break;
    }
    return "none";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "none" || s.empty()) return Split::none;
    throw ConfigError("unknown split '" + s + "'");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    // splitmix64 finalizer applied to a running combination
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(a) ^ b) ^ c);
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].split == s) out.push_back(i);
    }
    return out;
}

DatasetManifest scan_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
    DatasetManifest m;
    m.root = root;
    std::vector<fs::path> class_dirs;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory()) class_dirs.push_back(e.path());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw IoError("dataset root has no class directories: " + root.string());

    std::map<std::string, std::string> groups;
    if (fs::exists(root / "groups.tsv")) {
        std::ifstream in(root / "groups.tsv");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw IoError("groups.tsv: malformed line '" + line + "'");
            groups[line.substr(0, tab)] = line.substr(tab + 1);
        }
    }

    for (const auto& dir : class_dirs) {
        const int class_id = static_cast<int>(m.class_names.size());
        m.class_names.push_back(dir.filename().string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            if (!is_supported_image(e.path())) throw IoError("unsupported image format: " + e.path().string());
            files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const std::string rel = dir.filename().string() + "/" + f.filename().string();
            auto g = groups.find(rel);
            m.samples.push_back({rel, class_id, g == groups.end() ? std::string{} : g->second, Split::none});
        }
    }
    if (m.samples.empty()) throw IoError("dataset has no images: " + root.string());
    return m;
}

DatasetManifest split_dataset(DatasetManifest m, const std::array<double, 3>& ratios, std::uint64_t seed,
                              bool by_group, std::vector<std::string>* warnings) {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9 || std::any_of(ratios.begin(), ratios.end(), [](double r) { return r < 0; })) {
        throw ConfigError("split ratios must be non-negative and sum to 1");
    }
    constexpr Split kOrder[3] = {Split::train, Split::val, Split::test};

    if (!by_group) {
        const int used = static_cast<int>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0; }));
        for (int k = 0; k < m.num_classes(); ++k) {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < m.samples.size(); ++i) {
                if (m.samples[i].class_id == k) idx.push_back(i);
            }
            if (static_cast<int>(idx.size()) < used) {
                if (warnings) {
                    warnings->push_back("class '" + m.class_names[static_cast<std::size_t>(k)] + "' has only " +
                                        std::to_string(idx.size()) + " samples; all placed in train");
                }
                for (auto i : idx) m.samples[i].split = Split::train;
                continue;
            }
            std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(k)));
            std::shuffle(idx.begin(), idx.end(), rng);
            const auto n = static_cast<double>(idx.size());
            const auto n_val = static_cast<std::size_t>(std::llround(n * ratios[1]));
            const auto n_test = static_cast<std::size_t>(std::llround(n * ratios[2]));
            const std::size_t n_train = idx.size() - std::min(idx.size(), n_val + n_test);
            for (std::size_t j = 0; j < idx.size(); ++j) {
                m.samples[idx[j]].split = j < n_train ? Split::train
                                          : j < n_train + n_val ? Split::val
                                                                : Split::test;
            }
        }
        return m;
    }

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        const auto& s = m.samples[i];
        groups[s.group.empty() ? "\x01" + s.path : s.group].push_back(i);
    }
    std::vector<const std::vector<std::size_t>*> order;
    for (const auto& [key, members] : groups) order.push_back(&members);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    const auto total = static_cast<double>(m.samples.size());
    std::array<double, 3> assigned{0, 0, 0};
    for (const auto* members : order) {
        std::size_t best = 0;
        double best_deficit = -1e300;
        for (std::size_t s = 0; s < 3; ++s) {
            if (ratios[s] <= 0) continue;
            const double deficit = ratios[s] * total - assigned[s];
            if (deficit > best_deficit) {
                best_deficit = deficit;
                best = s;
            }
        }
        assigned[best] += static_cast<double>(members->size());
        for (auto i : *members) m.samples[i].split = kOrder[best];
    }
    return m;
}

void write_manifest_tsv(const DatasetManifest& m, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << "path\tclass\tgroup\tsplit\n";
    for (const auto& s : m.samples) {
        out << s.path << '\t' << m.class_names[static_cast<std::size_t>(s.class_id)] << '\t' << s.group << '\t'
            << to_string(s.split) << '\n';
    }
}

void AugmentConfig::validate() const {
    if (rotation_max_deg < 0) throw ConfigError("augment: rotation_max_deg must be >= 0");
    if (resize < 4) throw ConfigError("augment: resize must be >= 4");
    if (hflip_prob < 0 || hflip_prob > 1) throw ConfigError("augment: hflip_prob must lie in [0, 1]");
    for (float s : std) {
        if (!(s > 0)) throw ConfigError("augment: normalization std must be positive");
    }
}

ImageSource::ImageSource(DatasetManifest manifest, int resize) : manifest_(std::move(manifest)), resize_(resize) {
    if (resize_ < 4) throw ConfigError("image source: resize must be >= 4");
}

const NdArray<float>& ImageSource::resized(std::size_t index) {
    auto it = cache_.find(index);
    if (it != cache_.end()) return it->second;
    const auto& s = manifest_.samples.at(index);
    const auto img = to_planar(decode_image(manifest_.root / s.path));
    const auto sz = static_cast<std::size_t>(resize_);
    return cache_.emplace(index, resize_bilinear(img, sz, sz)).first->second;
}

Batch load_batch(ImageSource& source, Split split, std::span<const std::size_t> indices, const AugmentConfig& augment,
                 bool train_mode, std::uint64_t seed, std::uint64_t epoch) {
    augment.validate();
    if (augment.resize != source.resize()) throw ConfigError("load_batch: augment resize differs from the source");
    const auto s = static_cast<std::size_t>(source.resize());
    Batch b;
    b.images = NdArray<float>({indices.size(), 3, s, s});
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const std::size_t idx = indices[n];
        const auto& sample = source.manifest().samples.at(idx);
        if (split != Split::none && sample.split != split) {
            throw ConfigError("load_batch: sample " + std::to_string(idx) + " is not in split " + to_string(split));
        }
        NdArray<float> img = source.resized(idx);
        if (train_mode) {
            std::mt19937_64 rng(mix_seed(seed, epoch, idx));
            std::uniform_real_distribution<double> u(0.0, 1.0);
            if (u(rng) < augment.hflip_prob) img = hflip(img);
            const double angle = (2.0 * u(rng) - 1.0) * augment.rotation_max_deg;
            if (augment.rotation_max_deg > 0) img = rotate(img, angle);
        }
        img = normalize(img, augment.mean, augment.std);
        std::copy(img.data().begin(), img.data().end(), b.images.data().begin() + static_cast<long>(n * 3 * s * s));
        b.labels.push_back(sample.class_id);
        b.indices.push_back(idx);
    }
    return b;
}

} // namespace lcnx
