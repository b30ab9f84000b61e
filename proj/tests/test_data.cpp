// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "lcnx/dataset.hpp"
#include "lcnx/error.hpp"
#include "lcnx/image.hpp"
#include "lcnx/synth.hpp"
#include "support.hpp"

using namespace lcnx;
using lcnx::testing::TempDir;
namespace fs = std::filesystem;

namespace {

Image solid(int w, int h, std::uint8_t seed) {
    Image img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w * h * 3))};
    for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>((i * 37 + seed * 11) % 256);
    return img;
}

// classes × files tree of tiny ppms
void make_tree(const fs::path& root, const std::vector<std::string>& classes, int per_class, int w = 6, int h = 5) {
    for (std::size_t c = 0; c < classes.size(); ++c) {
        fs::create_directories(root / classes[c]);
        for (int i = 0; i < per_class; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "img%03d.ppm", i);
            write_ppm(root / classes[c] / name, solid(w, h, static_cast<std::uint8_t>(c * 31 + i)));
        }
    }
}

DatasetManifest synthetic_manifest(const std::vector<int>& sizes, int group_size = 0) {
    DatasetManifest m;
    m.root = "/nonexistent";
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        m.class_names.push_back("k" + std::to_string(k));
        for (int i = 0; i < sizes[k]; ++i) {
            Sample s;
            s.path = m.class_names.back() + "/" + std::to_string(i) + ".ppm";
            s.class_id = static_cast<int>(k);
            if (group_size > 0) s.group = "g" + std::to_string(k) + "_" + std::to_string(i / group_size);
            m.samples.push_back(s);
        }
    }
    return m;
}

std::map<int, std::array<int, 3>> per_class_counts(const DatasetManifest& m) {
    std::map<int, std::array<int, 3>> out;
    for (const auto& s : m.samples) {
        auto& c = out[s.class_id];
        if (s.split == Split::train) ++c[0];
        if (s.split == Split::val) ++c[1];
        if (s.split == Split::test) ++c[2];
    }
    return out;
}

std::vector<Split> assignment(const DatasetManifest& m) {
    std::vector<Split> out;
    for (const auto& s : m.samples) out.push_back(s.split);
    return out;
}

} // namespace

TEST_CASE("scan: two classes of three files", "[data][scan]") {
    TempDir dir("scan");
    make_tree(dir.path(), {"beta", "alpha"}, 3);
    const auto m = scan_dataset(dir.path());
    CHECK(m.num_classes() == 2);
    REQUIRE(m.samples.size() == 6);
    CHECK(m.class_names == std::vector<std::string>{"alpha", "beta"});
    CHECK(m.samples[0].path == "alpha/img000.ppm");
    CHECK(m.samples[3].path == "beta/img000.ppm");
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(m.samples[i].class_id == static_cast<int>(i / 3));
        CHECK(m.samples[i].split == Split::none);
    }
    const auto again = scan_dataset(dir.path());
    REQUIRE(again.samples.size() == m.samples.size());
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        CHECK(again.samples[i].path == m.samples[i].path);
        CHECK(again.samples[i].class_id == m.samples[i].class_id);
    }
}

TEST_CASE("scan errors", "[data][scan]") {
    TempDir dir("scan_err");
    CHECK_THROWS_AS(scan_dataset(dir.path()), IoError);
    CHECK_THROWS_AS(scan_dataset(dir / "missing"), IoError);
    fs::create_directories(dir / "a");
    CHECK_THROWS_AS(scan_dataset(dir.path()), IoError);
    std::ofstream(dir / "a" / "x.gif") << "GIF89a";
    CHECK_THROWS_AS(scan_dataset(dir.path()), IoError);
    fs::remove(dir / "a" / "x.gif");
    std::ofstream(dir / "a" / "bad.ppm") << "P6\n4 4\n255\nxx";
    const auto m = scan_dataset(dir.path());
    ImageSource src(m, 8);
    CHECK_THROWS_AS(src.resized(0), IoError);
}

TEST_CASE("scan reads group keys", "[data][scan]") {
    TempDir dir("groups");
    make_tree(dir.path(), {"a", "b"}, 2);
    std::ofstream(dir / "groups.tsv") << "a/img000.ppm\tv1\na/img001.ppm\tv1\nb/img001.ppm\tv2\n";
    const auto m = scan_dataset(dir.path());
    CHECK(m.samples[0].group == "v1");
    CHECK(m.samples[1].group == "v1");
    CHECK(m.samples[2].group.empty());
    CHECK(m.samples[3].group == "v2");
}

TEST_CASE("stratified split 80/10/10", "[data][split]") {
    const auto m = split_dataset(synthetic_manifest({100, 100, 100}), {0.8, 0.1, 0.1}, 42, false);
    for (const auto& [k, c] : per_class_counts(m)) {
        CHECK(c[0] == 80);
        CHECK(c[1] == 10);
        CHECK(c[2] == 10);
    }
    CHECK(assignment(m) == assignment(split_dataset(synthetic_manifest({100, 100, 100}), {0.8, 0.1, 0.1}, 42, false)));
    CHECK(assignment(m) != assignment(split_dataset(synthetic_manifest({100, 100, 100}), {0.8, 0.1, 0.1}, 43, false)));
}

TEST_CASE("stratified split sizes are within one sample of the ratios", "[data][split][property]") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> size(3, 157);
    std::uniform_real_distribution<double> u(0.02, 0.4);
    for (int trial = 0; trial < 200; ++trial) {
        const double r1 = u(rng), r2 = u(rng);
        const std::array<double, 3> ratios{1.0 - r1 - r2, r1, r2};
        std::vector<int> sizes(static_cast<std::size_t>(2 + trial % 5));
        for (auto& s : sizes) s = size(rng);
        const auto m = split_dataset(synthetic_manifest(sizes), ratios, rng(), false);
        for (const auto& [k, c] : per_class_counts(m)) {
            const double n = sizes[static_cast<std::size_t>(k)];
            for (int s = 0; s < 3; ++s) CHECK(std::abs(c[static_cast<std::size_t>(s)] - n * ratios[static_cast<std::size_t>(s)]) <= 1.0);
        }
    }
}

TEST_CASE("split rejects bad ratios and warns on tiny classes", "[data][split]") {
    CHECK_THROWS_AS(split_dataset(synthetic_manifest({10}), {0.8, 0.1, 0.2}, 1, false), ConfigError);
    CHECK_THROWS_AS(split_dataset(synthetic_manifest({10}), {1.1, -0.1, 0.0}, 1, false), ConfigError);
    std::vector<std::string> warnings;
    const auto m = split_dataset(synthetic_manifest({2, 20}), {0.8, 0.1, 0.1}, 1, false, &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("k0") != std::string::npos);
    CHECK(m.samples[0].split == Split::train);
    CHECK(m.samples[1].split == Split::train);
    // two used splits need only two samples
    warnings.clear();
    split_dataset(synthetic_manifest({2}), {0.5, 0.5, 0.0}, 1, false, &warnings);
    CHECK(warnings.empty());
}

TEST_CASE("group split with a single group is atomic", "[data][split][group]") {
    auto m = synthetic_manifest({7, 5});
    for (auto& s : m.samples) s.group = "only";
    const auto out = split_dataset(m, {0.8, 0.1, 0.1}, 9, true);
    const auto first = out.samples[0].split;
    CHECK(first != Split::none);
    for (const auto& s : out.samples) CHECK(s.split == first);
}

TEST_CASE("group splits never leak", "[data][split][group][property]") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> sizes(3);
        for (auto& s : sizes) s = 5 + static_cast<int>(rng() % 60);
        auto m = synthetic_manifest(sizes, 1 + static_cast<int>(rng() % 8));
        // leave some samples ungrouped and share some keys across classes
        for (auto& s : m.samples) {
            if (rng() % 7 == 0) s.group.clear();
            else if (rng() % 5 == 0) s.group = "shared" + std::to_string(rng() % 3);
        }
        const auto seed = rng();
        const auto out = split_dataset(m, {0.7, 0.15, 0.15}, seed, true);
        std::map<std::string, std::set<Split>> seen;
        for (const auto& s : out.samples) {
            CHECK(s.split != Split::none);
            if (!s.group.empty()) seen[s.group].insert(s.split);
        }
        for (const auto& [g, splits] : seen) CHECK(splits.size() == 1);
        CHECK(assignment(out) == assignment(split_dataset(m, {0.7, 0.15, 0.15}, seed, true)));
    }
}

TEST_CASE("group split is deterministic and roughly proportional", "[data][split][group]") {
    const auto m = synthetic_manifest({200, 200}, 4);
    const auto a = split_dataset(m, {0.8, 0.1, 0.1}, 5, true);
    CHECK(assignment(a) == assignment(split_dataset(m, {0.8, 0.1, 0.1}, 5, true)));
    std::array<int, 3> n{};
    for (const auto& s : a.samples) ++n[static_cast<std::size_t>(s.split) - 1];
    CHECK(std::abs(n[0] - 320) <= 4);
    CHECK(std::abs(n[1] - 40) <= 4);
    CHECK(std::abs(n[2] - 40) <= 4);
}

TEST_CASE("manifest tsv export", "[data][manifest]") {
    TempDir dir("manifest");
    auto m = split_dataset(synthetic_manifest({3, 3}, 2), {0.34, 0.33, 0.33}, 1, false);
    write_manifest_tsv(m, dir / "m.tsv");
    std::ifstream in(dir / "m.tsv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "path\tclass\tgroup\tsplit");
    std::getline(in, line);
    CHECK(line == "k0/0.ppm\tk0\tg0_0\t" + to_string(m.samples[0].split));
}

TEST_CASE("ppm round trip and image helpers", "[data][image]") {
    TempDir dir("ppm");
    const auto img = solid(7, 3, 4);
    write_ppm(dir / "x.ppm", img);
    const auto back = read_ppm(dir / "x.ppm");
    CHECK(back.width == 7);
    CHECK(back.height == 3);
    CHECK(back.rgb == img.rgb);

    const auto planes = to_planar(img);
    CHECK(planes.shape() == Shape{3, 3, 7});
    CHECK(planes(1, 2, 5) == img.rgb[(2 * 7 + 5) * 3 + 1]);
    CHECK(hflip(hflip(planes)) == planes);
    CHECK(hflip(planes)(0, 1, 0) == planes(0, 1, 6));
    const auto same = resize_bilinear(planes, 3, 7);
    CHECK(same == planes);
    const auto r0 = rotate(planes, 0.0);
    for (std::size_t i = 0; i < planes.numel(); ++i) CHECK(r0.data()[i] == Catch::Approx(planes.data()[i]).margin(1e-4));

    std::vector<std::uint8_t> gray{0, 128, 255, 7, 9, 11};
    write_pgm(dir / "g.pgm", 3, 2, gray);
    int w = 0, h = 0;
    CHECK(read_pgm(dir / "g.pgm", w, h) == gray);
    CHECK(w == 3);
    CHECK(h == 2);
}

TEST_CASE("normalize round trip", "[data][image][property]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto x = lcnx::testing::random_array<float>({3, 9, 5}, seed, 0.0, 255.0);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<float> m(0.0f, 1.0f), s(0.05f, 1.0f);
        const std::array<float, 3> mean{m(rng), m(rng), m(rng)}, sd{s(rng), s(rng), s(rng)};
        const auto back = denormalize(normalize(x, mean, sd), mean, sd);
        // relative to the 0..1 scale of x / 255
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(back.data()[i] - x.data()[i]) / 255.0f <= 1e-6f);
    }
    const auto one = normalize(NdArray<float>({3, 1, 1}, {255.0f, 0.0f, 127.5f}), {0.5f, 0.5f, 0.5f}, {0.5f, 0.25f, 1.0f});
    CHECK(one.data()[0] == 1.0f);
    CHECK(one.data()[1] == -2.0f);
    CHECK(one.data()[2] == 0.0f);
}

TEST_CASE("load_batch determinism and augmentation", "[data][batch]") {
    TempDir dir("batch");
    make_tree(dir.path(), {"a", "b"}, 4, 9, 7);
    const auto m = split_dataset(scan_dataset(dir.path()), {0.5, 0.5, 0.0}, 3, false);
    ImageSource src(m, 8);
    AugmentConfig aug;
    aug.resize = 8;
    const auto train = m.indices(Split::train);
    REQUIRE(!train.empty());

    const auto e1 = load_batch(src, Split::train, train, aug, false, 1, 0);
    const auto e2 = load_batch(src, Split::train, train, aug, false, 99, 5);
    CHECK(e1.images == e2.images);
    CHECK(e1.images.shape() == Shape{train.size(), 3, 8, 8});

    const auto t1 = load_batch(src, Split::train, train, aug, true, 7, 2);
    const auto t2 = load_batch(src, Split::train, train, aug, true, 7, 2);
    CHECK(t1.images == t2.images);
    const auto t3 = load_batch(src, Split::train, train, aug, true, 7, 3);
    CHECK(t1.images != t3.images);
    for (std::size_t n = 0; n < train.size(); ++n) {
        CHECK(t1.labels[n] == m.samples[train[n]].class_id);
        CHECK(t1.indices[n] == train[n]);
    }

    // per-sample randomness does not depend on batch composition
    const std::vector<std::size_t> tail(train.begin() + 1, train.end());
    const auto t4 = load_batch(src, Split::train, tail, aug, true, 7, 2);
    const std::size_t per = 3 * 8 * 8;
    CHECK(std::equal(t4.images.data().begin(), t4.images.data().end(), t1.images.data().begin() + per));

    AugmentConfig plain = aug;
    plain.hflip_prob = 0.0;
    plain.rotation_max_deg = 0.0;
    CHECK(load_batch(src, Split::train, train, plain, true, 7, 2).images == e1.images);

    AugmentConfig flip = plain;
    flip.hflip_prob = 1.0;
    const auto f = load_batch(src, Split::train, train, flip, true, 7, 2);
    for (std::size_t n = 0; n < train.size(); ++n) {
        NdArray<float> one({3, 8, 8});
        std::copy_n(f.images.data().begin() + static_cast<long>(n * per), per, one.data().begin());
        const auto twice = hflip(one);
        CHECK(std::equal(twice.data().begin(), twice.data().end(), e1.images.data().begin() + static_cast<long>(n * per)));
    }

    CHECK_THROWS_AS(load_batch(src, Split::val, train, aug, false, 0, 0), ConfigError);
    AugmentConfig wrong = aug;
    wrong.resize = 16;
    CHECK_THROWS_AS(load_batch(src, Split::train, train, wrong, false, 0, 0), ConfigError);
    wrong = aug;
    wrong.rotation_max_deg = -1;
    CHECK_THROWS_AS(wrong.validate(), ConfigError);
    wrong = aug;
    wrong.resize = 3;
    CHECK_THROWS_AS(wrong.validate(), ConfigError);
}

TEST_CASE("synth domain is deterministic and readable", "[data][synth]") {
    TempDir dir("synth");
    SynthSpec spec;
    spec.num_classes = 3;
    spec.samples_per_class = 5;
    spec.image_size = 16;
    spec.seed = 4;
    spec.group_size = 2;
    CHECK(synth_domain(spec, dir / "a") == std::vector<int>{5, 5, 5});
    synth_domain(spec, dir / "b");
    const auto ma = scan_dataset(dir / "a");
    CHECK(ma.num_classes() == 3);
    CHECK(ma.class_names == synth_class_names(3));
    CHECK(ma.samples.size() == 15);
    CHECK(!ma.samples[0].group.empty());
    for (const auto& s : ma.samples) {
        std::ifstream fa(dir / "a" / s.path, std::ios::binary), fb(dir / "b" / s.path, std::ios::binary);
        const std::string ba((std::istreambuf_iterator<char>(fa)), {}), bb((std::istreambuf_iterator<char>(fb)), {});
        CHECK(ba == bb);
    }
    CHECK(synth_image(spec, 1, 3).rgb == synth_image(spec, 1, 3).rgb);
    CHECK(synth_image(spec, 1, 3).rgb != synth_image(spec, 1, 4).rgb);

    SynthSpec bad = spec;
    bad.num_classes = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.num_classes = kMaxSynthClasses + 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

namespace {

// per-class channel means and their standard errors over n images
struct ChannelStats {
    std::array<double, 3> mean{}, se{};
};

ChannelStats channel_stats(const SynthSpec& spec, int k, int n, std::uint64_t offset) {
    std::array<double, 3> s{}, s2{};
    for (int i = 0; i < n; ++i) {
        const auto img = synth_image(spec, k, offset + static_cast<std::uint64_t>(i));
        std::array<double, 3> m{};
        for (std::size_t p = 0; p < img.rgb.size(); ++p) m[p % 3] += img.rgb[p];
        for (int c = 0; c < 3; ++c) {
            const double v = m[static_cast<std::size_t>(c)] / (img.rgb.size() / 3.0);
            s[static_cast<std::size_t>(c)] += v;
            s2[static_cast<std::size_t>(c)] += v * v;
        }
    }
    ChannelStats out;
    for (std::size_t c = 0; c < 3; ++c) {
        out.mean[c] = s[c] / n;
        out.se[c] = std::sqrt(std::max(0.0, s2[c] / n - out.mean[c] * out.mean[c]) / n);
    }
    return out;
}

} // namespace

TEST_CASE("synth: equal shifts give the same law, a shift moves the statistics", "[data][synth]") {
    SynthSpec a;
    a.image_size = 24;
    SynthSpec a2 = a;
    a2.seed = 1234;
    SynthSpec b = a;
    b.palette_shift = b.texture_shift = 0.8;
    for (int k = 0; k < a.num_classes; ++k) {
        const auto x = channel_stats(a, k, 300, 0), y = channel_stats(a2, k, 300, 0), z = channel_stats(b, k, 300, 0);
        double max_z_shift = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double se = std::hypot(x.se[c], y.se[c]);
            CHECK(std::abs(x.mean[c] - y.mean[c]) <= 5 * se + 1e-9);
            max_z_shift = std::max(max_z_shift, std::abs(x.mean[c] - z.mean[c]) / std::hypot(x.se[c], z.se[c]));
        }
        CHECK(max_z_shift > 10);
    }
}

namespace {

// softmax regression on 4x4-average-pooled normalized pixels
struct LinearProbe {
    int k = 0, d = 0;
    std::vector<double> w, b;

    static std::vector<double> features(const Image& img) {
        const int s = img.width, cell = s / 4;
        std::vector<double> f(48, 0.0);
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                for (int c = 0; c < 3; ++c) {
                    const auto cy = std::min(3, y / cell), cx = std::min(3, x / cell);
                    f[static_cast<std::size_t>((c * 4 + cy) * 4 + cx)] +=
                        img.rgb[static_cast<std::size_t>((y * s + x) * 3 + c)] / 255.0 / (cell * cell);
                }
            }
        }
        return f;
    }

    std::vector<double> logits(const std::vector<double>& f) const {
        std::vector<double> z(b);
        for (int j = 0; j < k; ++j) {
            for (int i = 0; i < d; ++i) z[static_cast<std::size_t>(j)] += w[static_cast<std::size_t>(j * d + i)] * f[static_cast<std::size_t>(i)];
        }
        return z;
    }

    void fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y, int classes, int epochs, double lr) {
        k = classes;
        d = static_cast<int>(x[0].size());
        w.assign(static_cast<std::size_t>(k * d), 0.0);
        b.assign(static_cast<std::size_t>(k), 0.0);
        for (int e = 0; e < epochs; ++e) {
            std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
            for (std::size_t n = 0; n < x.size(); ++n) {
                auto z = logits(x[n]);
                const double mx = *std::max_element(z.begin(), z.end());
                double sum = 0;
                for (auto& v : z) sum += (v = std::exp(v - mx));
                for (int j = 0; j < k; ++j) {
                    const double g = z[static_cast<std::size_t>(j)] / sum - (y[n] == j ? 1.0 : 0.0);
                    gb[static_cast<std::size_t>(j)] += g;
                    for (int i = 0; i < d; ++i) gw[static_cast<std::size_t>(j * d + i)] += g * x[n][static_cast<std::size_t>(i)];
                }
            }
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i] / static_cast<double>(x.size());
            for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i] / static_cast<double>(x.size());
        }
    }

    double accuracy(const std::vector<std::vector<double>>& x, const std::vector<int>& y) const {
        int hit = 0;
        for (std::size_t n = 0; n < x.size(); ++n) {
            const auto z = logits(x[n]);
            hit += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == y[n];
        }
        return static_cast<double>(hit) / static_cast<double>(x.size());
    }
};

void sample_domain(const SynthSpec& spec, std::uint64_t first, int per_class, std::vector<std::vector<double>>& x,
                   std::vector<int>& y) {
    for (int k = 0; k < spec.num_classes; ++k) {
        for (int i = 0; i < per_class; ++i) {
            x.push_back(LinearProbe::features(synth_image(spec, k, first + static_cast<std::uint64_t>(i))));
            y.push_back(k);
        }
    }
}

} // namespace

TEST_CASE("synth: a linear probe trained on one domain degrades on the shifted domain", "[data][synth][shift]") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        SynthSpec a;
        a.image_size = 32;
        a.seed = seed;
        SynthSpec b = a;
        b.seed = seed + 100;
        b.palette_shift = b.texture_shift = 0.8;
        std::vector<std::vector<double>> xtr, xa, xb;
        std::vector<int> ytr, ya, yb;
        sample_domain(a, 0, 150, xtr, ytr);
        sample_domain(a, 10000, 60, xa, ya);
        sample_domain(b, 10000, 60, xb, yb);
        LinearProbe probe;
        probe.fit(xtr, ytr, a.num_classes, 300, 2.0);
        const double in_domain = probe.accuracy(xa, ya), shifted = probe.accuracy(xb, yb);
        INFO("seed " << seed << " in-domain " << in_domain << " shifted " << shifted);
        CHECK(in_domain - shifted >= 0.20);
    }
}
