// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <set>

#include "lcnx/error.hpp"
#include "lcnx/lora.hpp"
#include "lcnx/ops.hpp"
#include "lcnx/trainer.hpp"
#include "model_check.hpp"
#include "support.hpp"

using namespace lcnx;
using lcnx::testing::random_array;

namespace {

template <typename T>
void randomize_b(PeftModel<T>& peft, std::uint64_t seed, double scale = 0.2) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& ad : peft.adapters()) {
        for (auto& v : ad.b.value.data()) v = static_cast<T>(u(rng));
    }
}

// y = x W^T + b + s * (x A^T) B^T, element by element.
NdArray<double> adapted_oracle(const NdArray<double>& x, const NdArray<double>& w, const NdArray<double>& b,
                               const NdArray<double>& a, const NdArray<double>& bb, double s) {
    const std::size_t n = x.dim(0), k = x.dim(1), d = w.dim(0), r = a.dim(0);
    NdArray<double> y({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> ax(r, 0.0);
        for (std::size_t q = 0; q < r; ++q)
            for (std::size_t j = 0; j < k; ++j) ax[q] += a(q, j) * x(i, j);
        for (std::size_t o = 0; o < d; ++o) {
            double v = b[o];
            for (std::size_t j = 0; j < k; ++j) v += w(o, j) * x(i, j);
            double delta = 0;
            for (std::size_t q = 0; q < r; ++q) delta += bb(o, q) * ax[q];
            y(i, o) = v + s * delta;
        }
    }
    return y;
}

} // namespace

TEST_CASE("init_adapter shapes and validation", "[lora]") {
    const auto ad = init_adapter<float>(512, 128, 16, 32.0, 0.1, 7, "x");
    CHECK(ad.a.value.shape() == Shape{16, 128});
    CHECK(ad.b.value.shape() == Shape{512, 16});
    for (float v : ad.b.value.data()) CHECK(v == 0.0f);
    const float bound = std::sqrt(6.0f / 128.0f);
    for (float v : ad.a.value.data()) CHECK(std::abs(v) <= bound);
    CHECK(ad.scaling() == 2.0);
    CHECK(bitwise_equal(ad.a.value, init_adapter<float>(512, 128, 16, 32.0, 0.1, 7).a.value));
    CHECK_THROWS_AS(init_adapter<float>(128, 128, 200, 1.0, 0.0, 0), ConfigError);
    CHECK_THROWS_AS(init_adapter<float>(128, 128, 0, 1.0, 0.0, 0), ConfigError);
    CHECK_THROWS_AS(init_adapter<float>(128, 128, 4, 1.0, 1.0, 0), ConfigError);
    CHECK_NOTHROW(init_adapter<float>(8, 4, 4, 1.0, 0.0, 0));
}

TEST_CASE("adapted_linear examples", "[lora]") {
    Tape<double> t;
    const Var x = t.leaf(NdArray<double>({1, 2}, {2, 5}));
    const Var w = t.leaf(NdArray<double>({2, 2}));
    const Var b = t.leaf(NdArray<double>({2}));
    const Var a = t.leaf(NdArray<double>({1, 2}, {1, 0}));
    const Var bb = t.leaf(NdArray<double>({2, 1}, {1, 0}));
    CHECK(t.value(adapted_linear(t, x, w, b, a, bb, 1.0, 0.0, false, nullptr)) == NdArray<double>({1, 2}, {2, 0}));
    // alpha = r gives scale exactly 1; doubling alpha doubles the delta
    CHECK(t.value(adapted_linear(t, x, w, b, a, bb, 2.0, 0.0, false, nullptr)) == NdArray<double>({1, 2}, {4, 0}));

    const Var zero_b = t.leaf(NdArray<double>({2, 1}));
    const auto xr = random_array({4, 2}, 1), wr = random_array({2, 2}, 2), br = random_array({2}, 3);
    const Var X = t.leaf(xr), W = t.leaf(wr), B = t.leaf(br);
    CHECK(t.value(adapted_linear(t, X, W, B, a, zero_b, 3.0, 0.0, false, nullptr)) ==
          t.value(ops::linear(t, X, W, B)));
    // dropout in train mode needs a generator
    CHECK_THROWS_AS(adapted_linear(t, X, W, B, a, zero_b, 1.0, 0.5, true, nullptr), ConfigError);
    CHECK_THROWS_AS(adapted_linear(t, X, W, B, t.leaf(NdArray<double>({1, 3})), zero_b, 1.0, 0.0, false, nullptr),
                    ShapeError);
}

TEST_CASE("adapted_linear matches the element-wise oracle", "[lora][property]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto x = random_array({3, 6}, seed), w = random_array({5, 6}, seed + 1), b = random_array({5}, seed + 2);
        const auto a = random_array({2, 6}, seed + 3), bb = random_array({5, 2}, seed + 4);
        const double s = 0.5 + static_cast<double>(seed);
        Tape<double> t;
        const auto y = t.value(adapted_linear(t, t.leaf(x), t.leaf(w), t.leaf(b), t.leaf(a), t.leaf(bb), s, 0.3, false,
                                              nullptr));
        CHECK(max_abs_diff(y, adapted_oracle(x, w, b, a, bb, s)) < 1e-12);
    }
}

TEST_CASE("dropout applies to the adapter path only, in train mode", "[lora][dropout]") {
    const auto x = random_array({4, 6}, 1), w = random_array({5, 6}, 2), b = random_array({5}, 3);
    const auto a = random_array({2, 6}, 4), bb = random_array({5, 2}, 5);
    Tape<double> t;
    const Var X = t.leaf(x), W = t.leaf(w), B = t.leaf(b), A = t.leaf(a), BB = t.leaf(bb);
    const auto eval = t.value(adapted_linear(t, X, W, B, A, BB, 1.0, 0.5, false, nullptr));
    std::mt19937_64 rng(3);
    const auto train = t.value(adapted_linear(t, X, W, B, A, BB, 1.0, 0.5, true, &rng));
    CHECK(max_abs_diff(eval, train) > 1e-6);
    // zero B: the base path is untouched whatever the mask
    const Var ZB = t.leaf(NdArray<double>({5, 2}));
    std::mt19937_64 rng2(3);
    CHECK(t.value(adapted_linear(t, X, W, B, A, ZB, 1.0, 0.9, true, &rng2)) == t.value(ops::linear(t, X, W, B)));

    // inverted scaling keeps the expectation: average over many masks approaches eval
    NdArray<double> mean(eval.shape());
    std::mt19937_64 rng3(11);
    const int trials = 4000;
    for (int i = 0; i < trials; ++i) {
        Tape<double> tt;
        const auto y = tt.value(adapted_linear(tt, tt.leaf(x), tt.leaf(w), tt.leaf(b), tt.leaf(a), tt.leaf(bb), 1.0,
                                               0.5, true, &rng3));
        for (std::size_t j = 0; j < y.numel(); ++j) mean[j] += y[j] / trials;
    }
    CHECK(max_abs_diff(mean, eval) < 0.05);
}

TEST_CASE("delta path is linear in alpha and in B", "[lora][property]") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto x = random_array({2, 4}, seed), w = random_array({3, 4}, seed + 1), b = random_array({3}, seed + 2);
        const auto a = random_array({2, 4}, seed + 3), bb = random_array({3, 2}, seed + 4);
        NdArray<double> b2 = bb;
        for (auto& v : b2.data()) v *= 3.0;
        Tape<double> t;
        const Var X = t.leaf(x), W = t.leaf(w), B = t.leaf(b), A = t.leaf(a);
        const auto base = t.value(ops::linear(t, X, W, B));
        const auto y1 = t.value(adapted_linear(t, X, W, B, A, t.leaf(bb), 1.5, 0.0, false, nullptr));
        const auto y2 = t.value(adapted_linear(t, X, W, B, A, t.leaf(bb), 3.0, 0.0, false, nullptr));
        const auto y3 = t.value(adapted_linear(t, X, W, B, A, t.leaf(b2), 1.5, 0.0, false, nullptr));
        for (std::size_t i = 0; i < base.numel(); ++i) {
            const double d1 = y1[i] - base[i];
            CHECK(y2[i] - base[i] == Catch::Approx(2 * d1).margin(1e-12));
            CHECK(y3[i] - base[i] == Catch::Approx(3 * d1).margin(1e-12));
        }
    }
}

TEST_CASE("merge and unmerge", "[lora][merge]") {
    const auto w = random_array<float>({6, 5}, 1);
    auto ad = init_adapter<float>(6, 5, 2, 4.0, 0.0, 3);
    CHECK(bitwise_equal(merge(w, ad), w));
    ad.b.value = random_array<float>({6, 2}, 4);
    const auto merged = merge(w, ad);
    CHECK(max_abs_diff(merged, w) > 1e-3);
    CHECK(max_abs_diff(unmerge(merged, ad), w) < 1e-6);
    CHECK_THROWS_AS(merge(random_array<float>({5, 6}, 1), ad), ShapeError);

    // merged plain linear vs adapted path on 100 random inputs
    Tape<float> t;
    const auto bias = random_array<float>({6}, 5);
    const Var W = t.leaf(w), M = t.leaf(merged), B = t.leaf(bias), A = t.leaf(ad.a.value), BB = t.leaf(ad.b.value);
    for (std::uint64_t s = 0; s < 100; ++s) {
        const Var X = t.leaf(random_array<float>({1, 5}, 100 + s, -2, 2));
        const auto y1 = t.value(adapted_linear(t, X, W, B, A, BB, ad.scaling(), 0.0, false, nullptr));
        const auto y2 = t.value(ops::linear(t, X, M, B));
        CHECK(max_abs_diff(y1, y2) < 1e-5);
    }
}

TEST_CASE("inject on the Base layout", "[lora][inject]") {
    LoraConfig lc;
    const auto layout = lora_layout(ModelConfig::base(), lc);
    CHECK(layout.size() == 2 * 72);
    std::size_t n = 0;
    for (const auto& s : layout) n += shape_numel(s.shape);
    CHECK(n == 2'887'680);
}

TEST_CASE("inject freezes the base and keeps the head trainable", "[lora][inject]") {
    LoraConfig lc;
    lc.rank = 2;
    const auto base = build_model<float>(ModelConfig::toy(4), 1);
    const auto peft = inject(base, lc, 5, 3);
    CHECK(peft.adapters().size() == 8);
    CHECK(peft.config().num_classes == 3);
    std::set<std::string> trainable;
    for (const auto* p : peft.parameters()) {
        if (p->trainable) trainable.insert(p->name);
    }
    std::set<std::string> expected{"head.fc.weight", "head.fc.bias"};
    for (const auto& ad : peft.adapters()) {
        expected.insert(ad.a.name);
        expected.insert(ad.b.name);
    }
    CHECK(trainable == expected);
    CHECK(peft.find_adapter("stages.2.blocks.0.fc2") != nullptr);
    CHECK(peft.find_adapter("stages.2.blocks.0.dwconv") == nullptr);

    // counts: adapters r*(d+k) per projection, plus the head
    std::size_t closed = 0;
    for (int d : {8, 16, 32, 64}) closed += 2 * 2 * (static_cast<std::size_t>(d) + 4 * static_cast<std::size_t>(d));
    const auto c = count_params(peft);
    CHECK(c.trainable == closed + 3 * 64 + 3);
    CHECK(c.total == count_params(peft.base()).total + closed);

    LoraConfig only_fc2 = lc;
    only_fc2.targets = {"fc2"};
    CHECK(inject(base, only_fc2, 0).adapters().size() == 4);
    LoraConfig none = lc;
    none.targets = {"qkv"};
    CHECK_THROWS_AS(inject(base, none, 0), ConfigError);
    LoraConfig too_big = lc;
    too_big.rank = 9; // min(d, k) = 8 in stage 0
    CHECK_THROWS_AS(inject(base, too_big, 0), ConfigError);
}

TEST_CASE("toy adapter count: walk vs closed form at r=2", "[lora][params]") {
    LoraConfig lc;
    lc.rank = 2;
    const ModelConfig cfg = ModelConfig::toy(4);
    std::size_t walk = 0;
    for (const auto* p : inject(build_model<float>(cfg, 0), lc, 0).parameters()) {
        if (p->role == ParamRole::lora_a || p->role == ParamRole::lora_b) walk += p->value.numel();
    }
    std::size_t closed = 0;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t d = static_cast<std::size_t>(cfg.dims[s]);
        closed += static_cast<std::size_t>(cfg.depths[s]) * 2 * 2 * (d + 4 * d);
    }
    CHECK(walk == closed);
    CHECK(walk == 2 * 2 * 5 * (8 + 16 + 32 + 64));
}

TEST_CASE("zero-init equivalence", "[lora][property]") {
    LoraConfig lc;
    lc.rank = 4;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto base = build_model<double>(ModelConfig::toy(4), seed);
        const auto peft = inject(base, lc, seed);
        const auto x = random_array({2, 3, 32, 32}, seed + 50);
        CHECK(predict_logits(peft, x) == predict_logits(base, x));
        const auto bf = build_model<float>(ModelConfig::toy(4), seed);
        const auto pf = inject(bf, lc, seed);
        const auto xf = x.cast<float>();
        CHECK(max_abs_diff(predict_logits(pf, xf), predict_logits(bf, xf)) <= 1e-6);
    }
}

TEST_CASE("merged model matches the adapted forward", "[lora][merge]") {
    LoraConfig lc;
    lc.rank = 4;
    auto peft = inject(build_model<float>(ModelConfig::toy(4), 2), lc, 3);
    randomize_b(peft, 4);
    const auto merged = peft.merged();
    const auto x = random_array<float>({4, 3, 32, 32}, 6, -2, 2);
    CHECK(max_abs_diff(predict_logits(peft, x), predict_logits(merged, x)) < 1e-5);
    CHECK(count_params(merged).trainable == count_params(merged).total);
}

TEST_CASE("adapter gradients match finite differences", "[lora][gradcheck]") {
    LoraConfig lc;
    lc.rank = 2;
    lc.dropout = 0.0;
    const std::vector<int> labels{0, 2};
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto base = build_model<double>(ModelConfig::toy(3), seed);
        lcnx::testing::randomize(base, seed + 10);
        auto peft = inject(base, lc, seed);
        randomize_b(peft, seed + 20, 0.5);
        const auto x = random_array({2, 3, 32, 32}, seed + 30);
        CHECK(lcnx::testing::model_grad_check(peft, x, labels, seed, 3) < 1e-4);
    }
}

TEST_CASE("only adapters and head move during training", "[lora][freeze]") {
    LoraConfig lc;
    lc.rank = 2;
    auto peft = inject(build_model<float>(ModelConfig::toy(4), 0), lc, 1);
    const auto before = peft.base();
    std::vector<NdArray<float>> adapters_before;
    for (const auto& ad : peft.adapters()) adapters_before.push_back(ad.b.value);
    TrainConfig tc;
    tc.lr = 1e-2;
    Trainer trainer(peft, tc);
    Batch b{random_array<float>({4, 3, 32, 32}, 3), {0, 1, 2, 3}, {0, 1, 2, 3}};
    for (int i = 0; i < 5; ++i) trainer.train_step(b);
    for (const auto* p : peft.base().parameters()) {
        const auto& old = before.param(p->name).value;
        if (p->trainable) {
            CHECK_FALSE(bitwise_equal(old, p->value));
        } else {
            CHECK(bitwise_equal(old, p->value));
        }
    }
    for (std::size_t i = 0; i < adapters_before.size(); ++i) {
        CHECK_FALSE(bitwise_equal(adapters_before[i], peft.adapters()[i].b.value));
    }
}
