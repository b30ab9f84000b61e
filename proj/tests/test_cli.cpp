// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lcnx/checkpoint.hpp"
#include "lcnx/image.hpp"
#include "lcnx/lora.hpp"
#include "lcnx/model.hpp"
#include "support.hpp"

using namespace lcnx;
using lcnx::testing::TempDir;
namespace fs = std::filesystem;

namespace {

const std::string kCli = LCNX_CLI_PATH;
const std::string kToy = " --model.depths 1,1,1,1 --model.dims 8,16,32,64 --model.image_size 32";

struct Run {
    int code = -1;
    std::string out; ///< stdout and stderr
};

Run run(const TempDir& dir, const std::string& args) {
    const auto log = dir / "cli.log";
    const std::string cmd = "cd '" + dir.path().string() + "' && '" + kCli + "' " + args + " > '" + log.string() +
                            "' 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    r.out.assign(std::istreambuf_iterator<char>(in), {});
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, '\t');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

double metric(const fs::path& tsv, const std::string& name) {
    for (const auto& row : read_tsv(tsv)) {
        if (row.size() == 2 && row[0] == name) return std::stod(row[1]);
    }
    FAIL("metric " << name << " missing from " << tsv);
    return 0;
}

} // namespace

TEST_CASE("synth writes a deterministic tree", "[cli][synth]") {
    TempDir dir("cli_synth");
    const auto a = run(dir, "synth --out a --classes 4 --per-class 200 --shift 0.8 --seed 1");
    REQUIRE(a.code == 0);
    CHECK(a.out.find("800") != std::string::npos);
    std::size_t images = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) images += e.path().extension() == ".ppm";
    CHECK(images == 800);
    REQUIRE(run(dir, "synth --out b --classes 4 --per-class 200 --shift 0.8 --seed 1").code == 0);
    CHECK(tree_bytes(dir / "a") == tree_bytes(dir / "b"));

    const auto bad = run(dir, "synth --out c --classes 1");
    CHECK(bad.code == 2);
    CHECK(bad.out.find("class") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "c" / "c0_hstripes"));
}

TEST_CASE("train with default schedule, resolved config and replay", "[cli][train]") {
    TempDir dir("cli_train");
    REQUIRE(run(dir, "synth --out d --per-class 12 --seed 3").code == 0);
    const auto r = run(dir, "train --data.root d --lora.rank 4 --lora.alpha 8 --output_dir run" + kToy);
    INFO(r.out);
    REQUIRE(r.code == 0);
    for (const char* f : {"config.json", "history.csv", "metrics.tsv", "predictions.tsv", "manifest.tsv",
                          "base.ckpt", "adapter.ckpt"}) {
        CHECK(fs::exists(dir / "run" / f));
    }
    const auto hist = read_tsv(dir / "run" / "history.csv");
    CHECK(hist.size() >= 2);
    CHECK(hist.size() <= 31);
    CHECK(hist[0][0] == "epoch,train_loss,val_loss,val_acc");

    const auto cfg = nlohmann::json::parse(slurp(dir / "run" / "config.json"));
    CHECK(cfg["train"]["lr"] == 1e-4);
    CHECK(cfg["train"]["epochs"] == 30);
    CHECK(cfg["train"]["batch_size"] == 32);
    CHECK(cfg["train"]["patience"] == 5);
    CHECK(cfg["lora"]["rank"] == 4);
    CHECK(cfg["model"]["dims"] == nlohmann::json({8, 16, 32, 64}));

    // the echoed config replays the run exactly
    REQUIRE(run(dir, "train --config run/config.json --output_dir replay").code == 0);
    CHECK(slurp(dir / "run" / "history.csv") == slurp(dir / "replay" / "history.csv"));
    CHECK(slurp(dir / "run" / "predictions.tsv") == slurp(dir / "replay" / "predictions.tsv"));
    const auto a = read_checkpoint(dir / "run" / "adapter.ckpt");
    const auto b = read_checkpoint(dir / "replay" / "adapter.ckpt");
    REQUIRE(a.tensors.size() == b.tensors.size());
    for (std::size_t i = 0; i < a.tensors.size(); ++i) CHECK(a.tensors[i] == b.tensors[i]);

    // the same output dir twice gives byte-identical artifacts
    const auto first = tree_bytes(dir / "replay");
    REQUIRE(run(dir, "train --config run/config.json --output_dir replay").code == 0);
    CHECK(tree_bytes(dir / "replay") == first);
}

TEST_CASE("default lora settings are echoed", "[cli][train]") {
    TempDir dir("cli_echo");
    REQUIRE(run(dir, "synth --out d --per-class 6 --seed 3").code == 0);
    const auto r = run(dir,
                       "train --data.root d --lora.rank 16 --lora.alpha 32 --lora.dropout 0.1 --train.epochs 1 "
                       "--model.depths 1,1,1,1 --model.dims 16,32,64,128 --model.image_size 32 --output_dir run");
    INFO(r.out);
    REQUIRE(r.code == 0);
    const auto cfg = nlohmann::json::parse(slurp(dir / "run" / "config.json"));
    CHECK(cfg["lora"]["rank"] == 16);
    CHECK(cfg["lora"]["alpha"] == 32.0);
    CHECK(cfg["lora"]["alpha"].is_number_float());
    CHECK(cfg["lora"]["dropout"] == 0.1);
    CHECK(cfg["lora"]["targets"] == nlohmann::json({"fc1", "fc2"}));
}

TEST_CASE("exit codes", "[cli][errors]") {
    TempDir dir("cli_exit");
    REQUIRE(run(dir, "synth --out d --per-class 6 --seed 3").code == 0);
    CHECK(run(dir, "train --data.root missing" + kToy).code == 2);
    CHECK(run(dir, "train --data.root d --train.nope 1" + kToy).code == 2);
    CHECK(run(dir, "train --data.root d --train.lr abc" + kToy).code == 2);
    std::ofstream(dir / "bad.json") << "{\"train\": {\"lr\": 0.1, \"bogus\": 1}}";
    const auto unknown = run(dir, "train --config bad.json --data.root d" + kToy);
    CHECK(unknown.code == 2);
    CHECK(unknown.out.find("train.bogus") != std::string::npos);
    std::ofstream(dir / "broken.json") << "{\"train\": ";
    CHECK(run(dir, "train --config broken.json --data.root d" + kToy).code == 2);
    CHECK(run(dir, "train --data.root d --train.lr 1e30 --lora.enabled false --train.epochs 2 --output_dir x" + kToy)
              .code == 3);
    CHECK(run(dir, "no-such-command").code == 2);
    CHECK(run(dir, "eval --checkpoint missing.ckpt --data d").code == 2);
}

TEST_CASE("eval, cross-eval and vocabulary checks", "[cli][eval]") {
    TempDir dir("cli_eval");
    REQUIRE(run(dir, "synth --out DA --per-class 80 --seed 1").code == 0);
    REQUIRE(run(dir, "synth --out DB --per-class 80 --seed 101 --shift 0.8").code == 0);
    const std::string t = " --train.epochs 15 --train.lr 2e-3 --lora.enabled false" + kToy;
    REQUIRE(run(dir, "train --data.root DA --output_dir rA" + t).code == 0);
    REQUIRE(run(dir, "train --data.root DB --output_dir rB" + t).code == 0);

    REQUIRE(run(dir, "eval --checkpoint rA/model.ckpt --data DA --out evalA.tsv").code == 0);
    REQUIRE(run(dir, "cross-eval --checkpoint rA/model.ckpt --data DA --out one.tsv").code == 0);
    const auto one = read_tsv(dir / "one.tsv");
    REQUIRE(one.size() == 2);
    CHECK(one[0] == std::vector<std::string>{"train\\test", "DA"});
    char expect[32];
    std::snprintf(expect, sizeof expect, "%.2f", 100.0 * metric(dir / "evalA.tsv", "accuracy"));
    CHECK(one[1][1] == expect);
    // eval metrics match the training run's own test report
    CHECK(metric(dir / "evalA.tsv", "accuracy") == metric(dir / "rA" / "metrics.tsv", "accuracy"));

    const auto r = run(dir, "cross-eval --checkpoint rA/model.ckpt --checkpoint rB/model.ckpt --data DA --data DB "
                            "--out m.tsv");
    INFO(r.out);
    REQUIRE(r.code == 0);
    const auto m = read_tsv(dir / "m.tsv");
    REQUIRE(m.size() == 3);
    CHECK(m[0] == std::vector<std::string>{"train\\test", "DA", "DB"});
    CHECK(m[1][0] == "DA");
    CHECK(m[2][0] == "DB");
    for (int i = 1; i <= 2; ++i) {
        REQUIRE(m[static_cast<std::size_t>(i)].size() == 3);
        const double diag = std::stod(m[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]);
        const double off = std::stod(m[static_cast<std::size_t>(i)][static_cast<std::size_t>(3 - i)]);
        CHECK(diag > off);
    }

    // a dataset whose class names the model does not know
    fs::create_directories(dir / "DC");
    fs::copy(dir / "DA" / "c0_hstripes", dir / "DC" / "zebra");
    fs::copy(dir / "DA" / "c1_vstripes", dir / "DC" / "c1_vstripes");
    CHECK(run(dir, "eval --checkpoint rA/model.ckpt --data DC").code == 4);
    CHECK(run(dir, "cross-eval --checkpoint rA/model.ckpt --data DA --data DC --out z.tsv").code == 4);
}

TEST_CASE("merge parity and zero adapters", "[cli][merge]") {
    TempDir dir("cli_merge");
    REQUIRE(run(dir, "synth --out d --per-class 30 --seed 5").code == 0);
    REQUIRE(run(dir, "train --data.root d --train.epochs 4 --train.lr 5e-3 --lora.rank 4 --lora.alpha 8 "
                     "--output_dir run" + kToy)
                .code == 0);
    REQUIRE(run(dir, "merge --base run/base.ckpt --adapter run/adapter.ckpt --out merged.ckpt").code == 0);
    REQUIRE(run(dir, "eval --checkpoint run/adapter.ckpt --data d --out adapter.tsv --predictions ap.tsv").code == 0);
    REQUIRE(run(dir, "eval --checkpoint merged.ckpt --data d --out merged.tsv --predictions mp.tsv").code == 0);
    for (const char* k : {"accuracy", "precision", "recall", "f1", "mcc"}) {
        CHECK(std::abs(metric(dir / "adapter.tsv", k) - metric(dir / "merged.tsv", k)) * 100 <= 1e-4);
    }
    const auto ap = read_tsv(dir / "ap.tsv"), mp = read_tsv(dir / "mp.tsv");
    REQUIRE(ap.size() == mp.size());
    for (std::size_t i = 0; i < ap.size(); ++i) CHECK(ap[i][2] == mp[i][2]);

    // a freshly injected adapter has B = 0, so merging leaves the base unchanged
    auto base = load_base(dir / "run" / "base.ckpt");
    LoraConfig lc;
    lc.rank = 2;
    lc.alpha = 4;
    save_adapter(inject(base, lc, 9), dir / "zero.ckpt");
    REQUIRE(run(dir, "merge --base run/base.ckpt --adapter zero.ckpt --out zmerged.ckpt").code == 0);
    const auto before = read_checkpoint(dir / "run" / "base.ckpt");
    const auto after = read_checkpoint(dir / "zmerged.ckpt");
    REQUIRE(before.tensors.size() == after.tensors.size());
    for (std::size_t i = 0; i < before.tensors.size(); ++i) {
        CHECK(before.header.tensors[i].name == after.header.tensors[i].name);
        CHECK(max_abs_diff(before.tensors[i], after.tensors[i]) <= 1e-7f);
    }

    auto other = ModelConfig::toy(4);
    other.dims = {16, 32, 64, 128};
    save_base(build_model<float>(other, 0), dir / "wide.ckpt");
    CHECK(run(dir, "merge --base wide.ckpt --adapter run/adapter.ckpt --out bad.ckpt").code == 4);
    CHECK_FALSE(fs::exists(dir / "bad.ckpt"));
}

TEST_CASE("saliency export", "[cli][saliency]") {
    TempDir dir("cli_sal");
    REQUIRE(run(dir, "synth --out d --per-class 10 --seed 2").code == 0);
    REQUIRE(run(dir, "train --data.root d --train.epochs 2 --train.lr 2e-3 --lora.enabled false --output_dir run" + kToy)
                .code == 0);
    Image img{45, 37, std::vector<std::uint8_t>(45 * 37 * 3)};
    for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<std::uint8_t>((i * 7919) % 251);
    write_ppm(dir / "odd.ppm", img);

    const auto r = run(dir, "saliency --checkpoint run/model.ckpt --image odd.ppm --out s.pgm");
    REQUIRE(r.code == 0);
    int w = 0, h = 0;
    const auto gray = read_pgm(dir / "s.pgm", w, h);
    CHECK(w == 45);
    CHECK(h == 37);
    const auto [lo, hi] = std::minmax_element(gray.begin(), gray.end());
    const bool flat = *lo == *hi;
    CHECK((flat ? *hi == 0 : (*lo == 0 && *hi == 255)));

    // the announced default class is the argmax; naming it explicitly gives the same map
    const auto open = r.out.find("class ");
    REQUIRE(open != std::string::npos);
    const int cls = std::stoi(r.out.substr(open + 6));
    REQUIRE(run(dir, "saliency --checkpoint run/model.ckpt --image odd.ppm --out t.pgm --class " +
                     std::to_string(cls)).code == 0);
    CHECK(slurp(dir / "s.pgm") == slurp(dir / "t.pgm"));
    const auto model = load_base(dir / "run" / "model.ckpt");
    const auto planes = normalize(resize_bilinear(to_planar(img), 32, 32), {0.485f, 0.456f, 0.406f},
                                  {0.229f, 0.224f, 0.225f});
    const auto logits = predict_logits(model, planes.reshaped({1, 3, 32, 32}));
    CHECK(static_cast<int>(std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin()) ==
          cls);
    CHECK(run(dir, "saliency --checkpoint run/model.ckpt --image odd.ppm --out u.pgm --class 9").code == 2);
}

TEST_CASE("params accounting", "[cli][params]") {
    TempDir dir("cli_params");
    const auto r = run(dir, "params");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("2887680") != std::string::npos);
    CHECK(r.out.find(std::to_string(2887680 + 1024 * 1000 + 1000)) != std::string::npos);
    const auto plain = run(dir, "params --lora.enabled false");
    REQUIRE(plain.code == 0);
    CHECK(plain.out.find("88717800") != std::string::npos);
    // without adapters everything is trainable
    std::size_t n = 0;
    for (std::size_t at = plain.out.find("88717800"); at != std::string::npos; at = plain.out.find("88717800", at + 1))
        ++n;
    CHECK(n >= 2);
}

TEST_CASE("help lists the training defaults", "[cli][help]") {
    TempDir dir("cli_help");
    const auto r = run(dir, "train --help");
    REQUIRE(r.code == 0);
    for (const char* s : {"--train.lr TEXT             default: 0.0001", "--train.epochs TEXT         default: 30",
                          "--train.batch_size TEXT     default: 32", "--train.patience TEXT       default: 5",
                          "--lora.rank TEXT            default: 16", "--lora.alpha TEXT           default: 32.0",
                          "--lora.dropout TEXT         default: 0.1"}) {
        CHECK(r.out.find(s) != std::string::npos);
    }
}
