// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "lcnx/dataset.hpp"
#include "lcnx/error.hpp"

namespace lcnx {

namespace {

constexpr const char* kPatterns[kMaxSynthClasses] = {"hstripes", "vstripes", "disc",  "checker",
                                                     "dstripes", "ring",     "cross", "dots"};

using Rgb = std::array<double, 3>;

// Rotation about the gray axis (1,1,1)/sqrt(3) by theta (Rodrigues).
Rgb hue_rotate(const Rgb& c, double theta) {
    const double k = 1.0 / std::sqrt(3.0);
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double dot = k * (c[0] + c[1] + c[2]);
    const Rgb cross{k * (c[2] - c[1]), k * (c[0] - c[2]), k * (c[1] - c[0])};
    Rgb out{};
    for (int i = 0; i < 3; ++i) out[i] = c[i] * cs + cross[i] * sn + k * dot * (1.0 - cs);
    return out;
}

double smoothstep(double edge, double soft, double x) {
    const double t = std::clamp((x - edge) / soft + 0.5, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct PatternParams {
    double freq, phase, cx, cy, radius, width;
};

// Foreground coverage in [0, 1] at normalized coordinates (u, v).
double pattern(int cls, const PatternParams& p, double u, double v) {
    constexpr double tau = 2.0 * std::numbers::pi;
    const double du = u - p.cx, dv = v - p.cy;
    const double dist = std::sqrt(du * du + dv * dv);
    switch (cls) {
    case 0:
        return smoothstep(0.0, 0.5, std::sin(tau * p.freq * v + p.phase));
    case 1:
        return smoothstep(0.0, 0.5, std::sin(tau * p.freq * u + p.phase));
    case 2:
        return smoothstep(0.0, 0.06, p.radius - dist);
    case 3:
        return smoothstep(0.0, 0.5, std::sin(tau * p.freq * 0.5 * u + p.phase) * std::sin(tau * p.freq * 0.5 * v + p.phase));
    case 4:
        return smoothstep(0.0, 0.5, std::sin(tau * p.freq * (u + v) / std::numbers::sqrt2 + p.phase));
    case 5:
        return smoothstep(0.0, 0.05, p.width - std::abs(dist - p.radius));
    case 6:
        return std::max(smoothstep(0.0, 0.05, p.width - std::abs(du)), smoothstep(0.0, 0.05, p.width - std::abs(dv)));
    default: {
        const double s = std::sin(tau * p.freq * u + p.phase) * std::sin(tau * p.freq * v + p.phase);
        return smoothstep(0.55, 0.2, s);
    }
    }
}

} // namespace

void SynthSpec::validate() const {
    if (num_classes < 2) throw ConfigError("synth: num_classes must be >= 2");
    if (num_classes > kMaxSynthClasses) {
        throw ConfigError("synth: at most " + std::to_string(kMaxSynthClasses) + " classes are available");
    }
    if (samples_per_class < 1) throw ConfigError("synth: samples_per_class must be >= 1");
    if (image_size < 8) throw ConfigError("synth: image_size must be >= 8");
    if (group_size < 0) throw ConfigError("synth: group_size must be >= 0");
    if (!std::isfinite(palette_shift) || !std::isfinite(texture_shift) || texture_shift < 0) {
        throw ConfigError("synth: shifts must be finite and texture_shift >= 0");
    }
}

std::vector<std::string> synth_class_names(int num_classes) {
    if (num_classes < 1 || num_classes > kMaxSynthClasses) throw ConfigError("synth: unsupported class count");
    std::vector<std::string> out;
    for (int k = 0; k < num_classes; ++k) out.push_back("c" + std::to_string(k) + "_" + kPatterns[k]);
    return out;
}

Image synth_image(const SynthSpec& spec, int class_id, std::uint64_t index) {
    spec.validate();
    if (class_id < 0 || class_id >= spec.num_classes) throw ConfigError("synth: class id out of range");
    std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(class_id), index));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    PatternParams p{};
    p.freq = uni(2.5, 4.0);
    p.phase = uni(0.0, 2.0 * std::numbers::pi);
    p.cx = uni(0.35, 0.65);
    p.cy = uni(0.35, 0.65);
    p.radius = uni(0.2, 0.32);
    p.width = uni(0.06, 0.1);

    const double theta = spec.palette_shift * std::numbers::pi;
    const double jitter = uni(-0.08, 0.08);
    Rgb fg{0.85 + jitter, 0.35 + jitter, 0.25 + jitter};
    Rgb bg{0.25 + jitter, 0.15 + jitter, 0.15 + jitter};
    fg = hue_rotate(fg, theta);
    bg = hue_rotate(bg, theta);

    // distractor: a fine oblique grating plus coarse blotches along a fixed color direction
    const double amp = 0.35 * spec.texture_shift;
    const double orient = uni(0.0, std::numbers::pi);
    const double tex_freq = uni(0.28, 0.36) * spec.image_size;
    const double tex_phase = uni(0.0, 2.0 * std::numbers::pi);
    const double blot_fx = uni(1.0, 2.0), blot_fy = uni(1.0, 2.0), blot_phase = uni(0.0, 6.28);
    const Rgb tex_dir{0.2, 0.9, 0.4};

    std::normal_distribution<double> noise(0.0, 0.03);
    Image img;
    img.width = img.height = spec.image_size;
    img.rgb.resize(static_cast<std::size_t>(spec.image_size) * spec.image_size * 3);
    const double inv = 1.0 / spec.image_size;
    for (int y = 0; y < spec.image_size; ++y) {
        for (int x = 0; x < spec.image_size; ++x) {
            const double u = (x + 0.5) * inv, v = (y + 0.5) * inv;
            const double m = pattern(class_id, p, u, v);
            double tex = 0.0;
            if (amp > 0) {
                const double along = u * std::cos(orient) + v * std::sin(orient);
                tex = amp * (0.6 * std::sin(2.0 * std::numbers::pi * tex_freq * along + tex_phase) +
                             0.4 * std::sin(2.0 * std::numbers::pi * (blot_fx * u + blot_phase)) *
                                 std::sin(2.0 * std::numbers::pi * blot_fy * v));
            }
            for (int c = 0; c < 3; ++c) {
                const double val = bg[c] + m * (fg[c] - bg[c]) + tex * tex_dir[c] + noise(rng);
                img.rgb[(static_cast<std::size_t>(y) * spec.image_size + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
            }
        }
    }
    return img;
}

std::vector<int> synth_domain(const SynthSpec& spec, const std::filesystem::path& root) {
    spec.validate();
    std::filesystem::create_directories(root);
    const auto names = synth_class_names(spec.num_classes);
    std::ofstream groups;
    if (spec.group_size > 0) {
        groups.open(root / "groups.tsv", std::ios::trunc);
        if (!groups) throw IoError("cannot write " + (root / "groups.tsv").string());
    }
    std::vector<int> counts;
    for (int k = 0; k < spec.num_classes; ++k) {
        const auto dir = root / names[static_cast<std::size_t>(k)];
        std::filesystem::create_directories(dir);
        for (int i = 0; i < spec.samples_per_class; ++i) {
            char file[32];
            std::snprintf(file, sizeof file, "%05d.ppm", i);
            write_ppm(dir / file, synth_image(spec, k, static_cast<std::uint64_t>(i)));
            if (groups.is_open()) {
                groups << names[static_cast<std::size_t>(k)] << '/' << file << '\t' << names[static_cast<std::size_t>(k)]
                       << ".g" << i / spec.group_size << '\n';
            }
        }
        counts.push_back(spec.samples_per_class);
    }
    return counts;
}

} // namespace lcnx
