// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

// lcnx: synthesize data, train, evaluate, merge and inspect models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcnx/checkpoint.hpp"
#include "lcnx/dataset.hpp"
#include "lcnx/error.hpp"
#include "lcnx/image.hpp"
#include "lcnx/json_io.hpp"
#include "lcnx/lora.hpp"
#include "lcnx/metrics.hpp"
#include "lcnx/model.hpp"
#include "lcnx/run_config.hpp"
#include "lcnx/synth.hpp"
#include "lcnx/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lcnx;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCompat = 4;

// A base model, or a base with adapters, restored from disk.
struct LoadedNet {
    std::optional<Model<float>> model;
    std::optional<PeftModel<float>> peft;
    json metadata;

    const Network<float>& net() const {
        if (peft) return *peft;
        return *model;
    }
};

fs::path resolve_base(const Checkpoint& adapter, const fs::path& adapter_path, const std::string& base_flag) {
    if (!base_flag.empty()) return base_flag;
    const auto& md = adapter.header.metadata;
    if (!md.contains("base_checkpoint")) {
        throw ConfigError("adapter checkpoint " + adapter_path.string() + " names no base; pass --base");
    }
    fs::path p = md.at("base_checkpoint").get<std::string>();
    if (p.is_relative()) p = adapter_path.parent_path() / p;
    return p;
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

LoadedNet load_net(const fs::path& path, const std::string& base_flag) {
    require_file(path, "checkpoint");
    LoadedNet out;
    Checkpoint ck = read_checkpoint(path);
    out.metadata = ck.header.metadata;
    if (ck.header.kind == CheckpointKind::base) {
        out.model = model_from_checkpoint(ck);
    } else {
        const fs::path base = resolve_base(ck, path, base_flag);
        require_file(base, "base checkpoint");
        out.peft = attach_adapter(load_base(base), ck);
    }
    return out;
}

AugmentConfig eval_augment(const json& metadata, int image_size) {
    AugmentConfig a;
    a.resize = image_size;
    if (metadata.contains("normalize")) {
        a.mean = metadata["normalize"].at("mean").get<std::array<float, 3>>();
        a.std = metadata["normalize"].at("std").get<std::array<float, 3>>();
    }
    a.validate();
    return a;
}

struct SplitFlags {
    std::vector<double> ratios{0.8, 0.1, 0.1};
    std::uint64_t seed = 0;
    bool by_group = false;

    void add_to(CLI::App* app) {
        app->add_option("--ratios", ratios, "train/val/test ratios")->expected(3)->capture_default_str();
        app->add_option("--split-seed", seed, "split seed")->capture_default_str();
        app->add_flag("--by-group", by_group, "keep groups.tsv groups inside one split");
    }
};

DatasetManifest load_split(const fs::path& root, const SplitFlags& f) {
    require_file(root, "dataset");
    std::vector<std::string> warnings;
    auto m = split_dataset(scan_dataset(root), {f.ratios[0], f.ratios[1], f.ratios[2]}, f.seed, f.by_group, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    return m;
}

std::string pct(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v;
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

// Registers --<key.path> for every leaf of the default run config.
class ConfigFlags {
public:
    void add_to(CLI::App* app, const std::vector<std::string>& sections) {
        const json defaults = default_run_config();
        for (const auto& path : config_leaf_paths(defaults)) {
            const auto dot = path.find('.');
            const std::string section = dot == std::string::npos ? path : path.substr(0, dot);
            if (std::find(sections.begin(), sections.end(), section) == sections.end()) continue;
            const json leaf = defaults.at(json::json_pointer("/" + replace_dots(path)));
            app->add_option("--" + path, values_[path], "default: " + leaf.dump());
        }
    }

    void apply(CLI::App* app, json& config) const {
        for (const auto& [path, text] : values_) {
            if (app->count("--" + path) > 0) set_config_value(config, path, text);
        }
    }

private:
    static std::string replace_dots(std::string s) {
        std::replace(s.begin(), s.end(), '.', '/');
        return s;
    }
    std::map<std::string, std::string> values_;
};

json normalize_metadata(const AugmentConfig& a) { return json{{"mean", a.mean}, {"std", a.std}}; }

void freeze_backbone(Model<float>& m) {
    m.set_trainable(false);
    m.param("head.fc.weight").trainable = true;
    m.param("head.fc.bias").trainable = true;
}

int run_synth(const fs::path& out, SynthSpec spec, std::optional<double> shift) {
    if (shift) spec.palette_shift = spec.texture_shift = *shift;
    const auto counts = synth_domain(spec, out);
    const auto names = synth_class_names(spec.num_classes);
    int total = 0;
    std::cout << "wrote " << out.string() << '\n';
    for (std::size_t k = 0; k < counts.size(); ++k) {
        std::cout << "  " << names[k] << '\t' << counts[k] << '\n';
        total += counts[k];
    }
    std::cout << "  total\t" << total << '\n';
    return 0;
}

int run_train(json cfg) {
    const ModelConfig requested = model_settings(cfg);
    const TrainConfig tc = train_settings(cfg);
    const DataSettings ds = data_settings(cfg);
    if (ds.root.empty()) throw ConfigError("data.root is required");
    require_file(ds.root, "dataset");
    const fs::path out = cfg.at("output_dir").get<std::string>();
    fs::create_directories(out);

    std::vector<std::string> warnings;
    auto manifest = split_dataset(scan_dataset(ds.root), ds.ratios, ds.split_seed, ds.by_group, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    const int k = manifest.num_classes();

    const std::string base_path = cfg.at("init").at("base_checkpoint").get<std::string>();
    const std::uint64_t init_seed = cfg.at("init").at("seed").get<std::uint64_t>();
    std::optional<Model<float>> base;
    if (!base_path.empty()) {
        require_file(base_path, "base checkpoint");
        base = load_base(base_path);
        cfg["model"] = base->config();
    } else {
        ModelConfig mc = requested;
        mc.num_classes = k;
        base = build_model<float>(mc, init_seed);
        cfg["model"] = mc;
    }
    const AugmentConfig aug = augment_settings(cfg);
    write_text(out / "config.json", cfg.dump(2) + "\n");
    write_manifest_tsv(manifest, out / "manifest.tsv");

    ImageSource source(manifest, aug.resize);
    json meta{{"normalize", normalize_metadata(aug)},
              {"dataset", fs::absolute(ds.root).lexically_normal().string()},
              {"dataset_name", fs::path(ds.root).lexically_normal().filename().string()},
              {"seed", tc.seed}};
    if (meta["dataset_name"].get<std::string>().empty()) {
        meta["dataset_name"] = fs::path(ds.root).lexically_normal().parent_path().filename().string();
    }

    auto progress = [](const EpochRecord& e) {
        std::cerr << "epoch " << e.epoch << "  train_loss " << e.train_loss << "  val_loss " << e.val_loss
                  << "  val_acc " << pct(e.val_accuracy) << "\n";
    };

    TrainHistory history;
    EvalResult result;
    const Split report_split = manifest.indices(Split::test).empty() ? Split::val : Split::test;
    const Averaging averaging = parse_averaging(cfg.at("train").at("averaging").get<std::string>());
    if (lora_enabled(cfg)) {
        fs::path base_file = base_path;
        if (base_path.empty()) {
            base_file = out / "base.ckpt";
            save_base(*base, base_file, meta);
        }
        auto peft = inject(std::move(*base), lora_settings(cfg), init_seed, k);
        peft.base().set_class_names(manifest.class_names);
        history = train(peft, source, tc, aug, {.on_epoch_end = progress});
        meta["base_checkpoint"] = fs::absolute(base_file).lexically_normal().string();
        meta["best_epoch"] = history.best_epoch;
        save_adapter(peft, out / "adapter.ckpt", meta);
        result = evaluate(peft, source, report_split, aug, averaging);
        const auto c = count_params(peft);
        std::cout << "trainable " << c.trainable << " / total " << c.total << '\n';
    } else {
        Model<float>& m = *base;
        if (m.config().num_classes != k || m.class_names() != manifest.class_names) m.reset_head(k, init_seed);
        m.set_class_names(manifest.class_names);
        if (cfg.at("train").at("freeze_backbone").get<bool>()) freeze_backbone(m);
        history = train(m, source, tc, aug, {.on_epoch_end = progress});
        meta["best_epoch"] = history.best_epoch;
        save_base(m, out / "model.ckpt", meta);
        result = evaluate(m, source, report_split, aug, averaging);
    }
    write_history_csv(history, out / "history.csv");
    write_text(out / "metrics.tsv", report_tsv(result.report));
    write_predictions_tsv(result, manifest, result.report.class_names, out / "predictions.tsv");
    std::cout << "best epoch " << history.best_epoch << " (val acc " << pct(history.best_val_accuracy) << ")\n";
    std::cout << to_string(report_split) << " metrics\n" << report_table(result.report);
    return 0;
}

int run_eval(const fs::path& ckpt, const std::string& base, const fs::path& data, const SplitFlags& sf,
             const std::string& split, const std::string& averaging, const std::string& out,
             const std::string& predictions) {
    const LoadedNet ln = load_net(ckpt, base);
    auto manifest = load_split(data, sf);
    const AugmentConfig aug = eval_augment(ln.metadata, ln.net().config().image_size);
    ImageSource source(manifest, aug.resize);
    const auto r = evaluate(ln.net(), source, parse_split(split), aug, parse_averaging(averaging));
    std::cout << report_table(r.report);
    if (!out.empty()) write_text(out, report_tsv(r.report));
    if (!predictions.empty()) write_predictions_tsv(r, source.manifest(), r.report.class_names, predictions);
    return 0;
}

int run_cross_eval(const std::vector<std::string>& ckpts, const std::string& base, const std::vector<std::string>& data,
                   const SplitFlags& sf, const std::string& out) {
    std::vector<LoadedNet> nets;
    std::vector<std::string> row_names;
    for (const auto& c : ckpts) {
        nets.push_back(load_net(c, base));
        const auto& md = nets.back().metadata;
        row_names.push_back(md.contains("dataset_name") ? md["dataset_name"].get<std::string>()
                                                        : fs::path(c).parent_path().filename().string());
    }
    std::vector<ImageSource> sources;
    std::vector<std::string> col_names;
    sources.reserve(data.size());
    for (const auto& d : data) {
        const int size = nets.front().net().config().image_size;
        sources.emplace_back(load_split(d, sf), size);
        col_names.push_back(fs::path(d).lexically_normal().filename().string());
    }
    std::ostringstream tsv;
    tsv << "train\\test";
    for (const auto& n : col_names) tsv << '\t' << n;
    tsv << '\n';
    for (std::size_t i = 0; i < nets.size(); ++i) {
        const AugmentConfig aug = eval_augment(nets[i].metadata, nets[i].net().config().image_size);
        tsv << row_names[i];
        for (auto& s : sources) {
            if (s.resize() != aug.resize) throw CompatibilityError("models in one cross-eval must share an image size");
            tsv << '\t' << pct(evaluate(nets[i].net(), s, Split::test, aug).report.accuracy);
        }
        tsv << '\n';
    }
    std::cout << tsv.str();
    if (!out.empty()) write_text(out, tsv.str());
    return 0;
}

int run_merge(const fs::path& base, const fs::path& adapter, const fs::path& out) {
    require_file(base, "base checkpoint");
    require_file(adapter, "adapter checkpoint");
    const Checkpoint ack = read_checkpoint(adapter);
    const auto peft = attach_adapter(load_base(base), ack);
    json meta = ack.header.metadata;
    meta.erase("base_checkpoint");
    meta["merged_from"] = {{"base", base.string()}, {"adapter", adapter.string()}};
    save_base(peft.merged(), out, meta);
    std::cout << "wrote " << out.string() << '\n';
    return 0;
}

int run_saliency(const fs::path& ckpt, const std::string& base, const fs::path& image_path,
                 const std::string& class_arg, const fs::path& out) {
    const LoadedNet ln = load_net(ckpt, base);
    const Network<float>& net = ln.net();
    require_file(image_path, "image");
    const Image img = decode_image(image_path);
    const auto size = static_cast<std::size_t>(net.config().image_size);
    const AugmentConfig aug = eval_augment(ln.metadata, net.config().image_size);
    const auto x = normalize(resize_bilinear(to_planar(img), size, size), aug.mean, aug.std);

    int cls = -1;
    if (class_arg.empty()) {
        const auto logits = predict_logits(net, x.reshaped({1, 3, size, size}));
        cls = static_cast<int>(std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin());
    } else {
        const auto& names = net.class_names();
        auto it = std::find(names.begin(), names.end(), class_arg);
        if (it != names.end()) {
            cls = static_cast<int>(it - names.begin());
        } else {
            try {
                std::size_t used = 0;
                cls = std::stoi(class_arg, &used);
                if (used != class_arg.size()) throw ConfigError("");
            } catch (...) {
                throw ConfigError("unknown class '" + class_arg + "'");
            }
        }
    }
    const auto map = saliency(net, x, cls);
    // back to the input resolution, then re-stretch to [0, 1]
    auto full = resize_bilinear(map.reshaped({1, size, size}), static_cast<std::size_t>(img.height),
                                static_cast<std::size_t>(img.width));
    float lo = *std::min_element(full.data().begin(), full.data().end());
    float hi = *std::max_element(full.data().begin(), full.data().end());
    std::vector<std::uint8_t> gray(full.numel(), 0);
    if (hi > 0) {
        const float span = hi - lo;
        for (std::size_t i = 0; i < gray.size(); ++i) {
            const float v = span > 0 ? (full.data()[i] - lo) / span : 1.0f;
            gray[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
    }
    write_pgm(out, img.width, img.height, gray);
    const auto& names = net.class_names();
    std::cout << "class " << cls;
    if (static_cast<std::size_t>(cls) < names.size()) std::cout << " (" << names[static_cast<std::size_t>(cls)] << ")";
    std::cout << " -> " << out.string() << '\n';
    return 0;
}

void print_params(std::size_t total, std::size_t trainable, std::size_t adapters, std::size_t head) {
    std::cout << "total\t" << total << '\n'
              << "trainable\t" << trainable << '\n'
              << "adapters\t" << adapters << '\n'
              << "head\t" << head << '\n';
}

std::size_t layout_numel(const std::vector<ParamSpec>& specs, const std::string& prefix = "") {
    std::size_t n = 0;
    for (const auto& s : specs) {
        if (s.name.rfind(prefix, 0) == 0) n += shape_numel(s.shape);
    }
    return n;
}

int run_params(const json& cfg, const std::string& ckpt) {
    ModelConfig mc;
    std::optional<LoraConfig> lora;
    if (!ckpt.empty()) {
        require_file(ckpt, "checkpoint");
        const Checkpoint ck = read_checkpoint(ckpt);
        mc = ck.header.model;
        lora = ck.header.lora;
    } else {
        mc = model_settings(cfg);
        if (lora_enabled(cfg)) lora = lora_settings(cfg);
    }
    const auto layout = model_layout(mc);
    const std::size_t base_total = layout_numel(layout);
    const std::size_t head = layout_numel(layout, "head.fc.");
    if (!lora) {
        print_params(base_total, base_total, 0, head);
        return 0;
    }
    const std::size_t adapters = layout_numel(lora_layout(mc, *lora));
    print_params(base_total + adapters, adapters + head, adapters, head);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"LoRA fine-tuning of a ConvNeXtV2-style backbone"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic pattern-classification dataset");
    SynthSpec spec;
    std::string synth_out;
    std::optional<double> shift;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--classes", spec.num_classes, "number of classes (2-8)")->capture_default_str();
    synth->add_option("--per-class", spec.samples_per_class, "images per class")->capture_default_str();
    synth->add_option("--size", spec.image_size, "image side length")->capture_default_str();
    synth->add_option("--shift", shift, "sets both palette and texture shift");
    synth->add_option("--palette-shift", spec.palette_shift, "hue rotation in units of pi")->capture_default_str();
    synth->add_option("--texture-shift", spec.texture_shift, "distractor texture amplitude")->capture_default_str();
    synth->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
    synth->add_option("--group-size", spec.group_size, "samples per group in groups.tsv (0: none)")
        ->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model or LoRA adapter on a dataset tree");
    std::string train_config;
    ConfigFlags train_flags;
    train_cmd->add_option("--config", train_config, "JSON run config");
    train_flags.add_to(train_cmd, {"model", "lora", "train", "augment", "data", "init", "output_dir"});

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on one split of a dataset");
    std::string eval_ckpt, eval_base, eval_data, eval_split = "test", eval_avg = "weighted", eval_out, eval_pred;
    SplitFlags eval_sf;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "base or adapter checkpoint")->required();
    eval_cmd->add_option("--base", eval_base, "base checkpoint for an adapter (default: recorded path)");
    eval_cmd->add_option("--data", eval_data, "dataset root")->required();
    eval_cmd->add_option("--split", eval_split, "train|val|test")->capture_default_str();
    eval_cmd->add_option("--averaging", eval_avg, "micro|macro|weighted")->capture_default_str();
    eval_cmd->add_option("--out", eval_out, "metrics TSV");
    eval_cmd->add_option("--predictions", eval_pred, "prediction dump TSV");
    eval_sf.add_to(eval_cmd);

    // cross-eval
    auto* cross_cmd = app.add_subcommand("cross-eval", "accuracy matrix of models x datasets (test splits)");
    std::vector<std::string> cross_ckpts, cross_data;
    std::string cross_base, cross_out;
    SplitFlags cross_sf;
    cross_cmd->add_option("--checkpoint", cross_ckpts, "checkpoints, one per row")->required();
    cross_cmd->add_option("--data", cross_data, "dataset roots, one per column")->required();
    cross_cmd->add_option("--base", cross_base, "base checkpoint for adapters (default: recorded path)");
    cross_cmd->add_option("--out", cross_out, "matrix TSV");
    cross_sf.add_to(cross_cmd);

    // merge
    auto* merge_cmd = app.add_subcommand("merge", "fold an adapter into its base weights");
    std::string merge_base, merge_adapter, merge_out;
    merge_cmd->add_option("--base", merge_base, "base checkpoint")->required();
    merge_cmd->add_option("--adapter", merge_adapter, "adapter checkpoint")->required();
    merge_cmd->add_option("--out", merge_out, "merged checkpoint")->required();

    // saliency
    auto* sal_cmd = app.add_subcommand("saliency", "input-gradient saliency map as PGM");
    std::string sal_ckpt, sal_base, sal_image, sal_class, sal_out;
    sal_cmd->add_option("--checkpoint", sal_ckpt, "base or adapter checkpoint")->required();
    sal_cmd->add_option("--base", sal_base, "base checkpoint for an adapter (default: recorded path)");
    sal_cmd->add_option("--image", sal_image, "input PPM")->required();
    sal_cmd->add_option("--class", sal_class, "class index or name (default: predicted class)");
    sal_cmd->add_option("--out", sal_out, "output PGM")->required();

    // params
    auto* params_cmd = app.add_subcommand("params", "total and trainable parameter counts");
    std::string params_config, params_ckpt;
    ConfigFlags params_flags;
    params_cmd->add_option("--config", params_config, "JSON run config");
    params_cmd->add_option("--checkpoint", params_ckpt, "checkpoint to inspect instead of a config");
    params_flags.add_to(params_cmd, {"model", "lora"});

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (synth->parsed()) return run_synth(synth_out, spec, shift);
        if (train_cmd->parsed()) {
            json cfg = train_config.empty() ? default_run_config() : load_run_config(train_config);
            train_flags.apply(train_cmd, cfg);
            return run_train(std::move(cfg));
        }
        if (eval_cmd->parsed()) {
            return run_eval(eval_ckpt, eval_base, eval_data, eval_sf, eval_split, eval_avg, eval_out, eval_pred);
        }
        if (cross_cmd->parsed()) return run_cross_eval(cross_ckpts, cross_base, cross_data, cross_sf, cross_out);
        if (merge_cmd->parsed()) return run_merge(merge_base, merge_adapter, merge_out);
        if (sal_cmd->parsed()) return run_saliency(sal_ckpt, sal_base, sal_image, sal_class, sal_out);
        if (params_cmd->parsed()) {
            json cfg = params_config.empty() ? default_run_config() : load_run_config(params_config);
            params_flags.apply(params_cmd, cfg);
            return run_params(cfg, params_ckpt);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const CompatibilityError& e) {
        std::cerr << "incompatible: " << e.what() << '\n';
        return kExitCompat;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
