// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "lcnx/error.hpp"
#include "lcnx/ops.hpp"

namespace lcnx {

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("train: betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("train: eps must be > 0");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be >= 0");
    if (max_epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
}

template <typename T>
void adamw_step(NdArray<T>& param, const NdArray<T>& grad, AdamSlot<T>& slot, long t, const TrainConfig& cfg,
                bool decay) {
    if (t < 1) throw ConfigError("adamw: step counter must be >= 1");
    if (grad.shape() != param.shape()) throw ShapeError("adamw: gradient " + shape_str(grad.shape()) +
                                                        " vs parameter " + shape_str(param.shape()));
    if (!grad.all_finite()) throw NumericError("adamw: non-finite gradient");
    if (slot.m.shape() != param.shape()) {
        slot.m = NdArray<T>(param.shape());
        slot.v = NdArray<T>(param.shape());
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    auto p = param.data();
    auto g = grad.data();
    auto m = slot.m.data();
    auto v = slot.v.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        double pi = p[i];
        if (decay) pi -= cfg.lr * cfg.weight_decay * pi;
        const double gi = g[i];
        const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        pi -= cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
        p[i] = static_cast<T>(pi);
    }
}

template <typename T>
void AdamW<T>::step(std::span<Parameter<T>* const> params, std::span<const NdArray<T>* const> grads) {
    if (params.size() != grads.size()) throw ShapeError("adamw: parameter and gradient counts differ");
    if (slots_.empty()) slots_.resize(params.size());
    if (slots_.size() != params.size()) throw ConfigError("adamw: parameter set changed between steps");
    ++t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (grads[i]) {
            adamw_step(p.value, *grads[i], slots_[i], t_, cfg_, decays(p.role));
        } else {
            adamw_step(p.value, NdArray<T>(p.value.shape()), slots_[i], t_, cfg_, decays(p.role));
        }
    }
}

template void adamw_step<float>(NdArray<float>&, const NdArray<float>&, AdamSlot<float>&, long, const TrainConfig&,
                                bool);
template void adamw_step<double>(NdArray<double>&, const NdArray<double>&, AdamSlot<double>&, long,
                                 const TrainConfig&, bool);
template class AdamW<float>;
template class AdamW<double>;

namespace {

std::vector<Parameter<float>*> trainable_of(Network<float>& net) {
    std::vector<Parameter<float>*> out;
    for (auto* p : net.parameters()) {
        if (p->trainable) out.push_back(p);
    }
    return out;
}

int argmax_row(std::span<const float> row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

} // namespace

Trainer::Trainer(Network<float>& net, TrainConfig cfg)
    : net_(net), opt_(cfg), dropout_rng_(mix_seed(cfg.seed, 0xd509)) {}

double Trainer::train_step(const Batch& batch) {
    Graph<float> g(false, &dropout_rng_);
    const Var x = g.input(batch.images);
    const Var logits = net_.forward(g, x, true);
    const Var loss = ops::softmax_cross_entropy(g.tape(), logits, batch.labels);
    g.tape().backward(loss);
    auto params = trainable_of(net_);
    std::vector<const NdArray<float>*> grads;
    grads.reserve(params.size());
    for (auto* p : params) grads.push_back(g.grad(*p));
    opt_.step(params, grads);
    return g.tape().value(loss)[0];
}

std::vector<int> class_mapping(const std::vector<std::string>& model_classes,
                               const std::vector<std::string>& dataset_classes, int model_num_classes) {
    std::vector<int> map(dataset_classes.size());
    if (model_classes.empty()) {
        if (static_cast<int>(dataset_classes.size()) > model_num_classes) {
            throw CompatibilityError("dataset has " + std::to_string(dataset_classes.size()) +
                                     " classes but the model predicts " + std::to_string(model_num_classes));
        }
        std::iota(map.begin(), map.end(), 0);
        return map;
    }
    for (std::size_t i = 0; i < dataset_classes.size(); ++i) {
        auto it = std::find(model_classes.begin(), model_classes.end(), dataset_classes[i]);
        if (it == model_classes.end()) {
            throw CompatibilityError("class '" + dataset_classes[i] + "' is not in the model vocabulary");
        }
        map[i] = static_cast<int>(it - model_classes.begin());
    }
    return map;
}

EvalResult evaluate(const Network<float>& net, ImageSource& source, Split split, const AugmentConfig& augment,
                    Averaging averaging, int batch_size) {
    const auto& manifest = source.manifest();
    const int k = net.config().num_classes;
    const auto map = class_mapping(net.class_names(), manifest.class_names, k);
    const auto idx = manifest.indices(split);
    if (idx.empty()) throw ConfigError("evaluate: split '" + to_string(split) + "' is empty");

    EvalResult r;
    r.scores = NdArray<float>({idx.size(), static_cast<std::size_t>(k)});
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t n = std::min(idx.size() - start, static_cast<std::size_t>(batch_size));
        const std::span<const std::size_t> chunk(idx.data() + start, n);
        Batch b = load_batch(source, split, chunk, augment, false, 0, 0);
        for (auto& l : b.labels) l = map[static_cast<std::size_t>(l)];

        Graph<float> g;
        const Var logits = net.forward(g, g.input(std::move(b.images)), false);
        const Var loss = ops::softmax_cross_entropy(g.tape(), logits, b.labels);
        loss_sum += static_cast<double>(g.tape().value(loss)[0]) * static_cast<double>(n);
        const auto probs = ops::softmax_rows(g.tape().value(logits));
        for (std::size_t i = 0; i < n; ++i) {
            const std::span<const float> row(probs.data().data() + i * static_cast<std::size_t>(k),
                                             static_cast<std::size_t>(k));
            std::copy(row.begin(), row.end(), r.scores.data().begin() + static_cast<long>((start + i) * k));
            r.preds.push_back(argmax_row(row));
            r.labels.push_back(b.labels[i]);
            r.indices.push_back(chunk[i]);
        }
    }
    r.loss = loss_sum / static_cast<double>(idx.size());
    std::vector<std::string> names = net.class_names();
    r.report = make_report(confusion(r.preds, r.labels, k), averaging, std::move(names));
    return r;
}

TrainHistory train(Network<float>& net, ImageSource& source, const TrainConfig& cfg, const AugmentConfig& augment,
                   const TrainHooks& hooks) {
    cfg.validate();
    augment.validate();
    const auto& manifest = source.manifest();
    const int k = net.config().num_classes;
    if (manifest.num_classes() != k) {
        throw CompatibilityError("train: dataset has " + std::to_string(manifest.num_classes()) +
                                 " classes, model head has " + std::to_string(k));
    }
    if (!net.class_names().empty() && net.class_names() != manifest.class_names) {
        throw CompatibilityError("train: model class names differ from the dataset's");
    }
    auto train_idx = manifest.indices(Split::train);
    if (train_idx.empty()) throw ConfigError("train: the train split is empty");
    if (manifest.indices(Split::val).empty()) throw ConfigError("train: the validation split is empty");

    Trainer trainer(net, cfg);
    auto trainable = trainable_of(net);
    std::vector<NdArray<float>> best_snapshot;
    auto snapshot = [&] {
        best_snapshot.clear();
        for (auto* p : trainable) best_snapshot.push_back(p->value);
    };
    snapshot();

    TrainHistory history;
    history.best_val_accuracy = -1.0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order = train_idx;
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 0x5u));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> chunk(order.data() + start, n);
            const Batch b = load_batch(source, Split::train, chunk, augment, true, cfg.seed,
                                       static_cast<std::uint64_t>(epoch));
            const double loss = trainer.train_step(b);
            if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            loss_sum += loss * static_cast<double>(n);
        }

        const EvalResult val = evaluate(net, source, Split::val, augment);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.val_loss = val.loss;
        rec.measured_val_accuracy = val.report.accuracy;
        rec.val_accuracy = hooks.val_accuracy_override ? hooks.val_accuracy_override(epoch, val.report.accuracy)
                                                       : val.report.accuracy;
        rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(rec);
        if (hooks.on_epoch_end) hooks.on_epoch_end(rec);

        if (rec.val_accuracy > history.best_val_accuracy) {
            history.best_val_accuracy = rec.val_accuracy;
            history.best_epoch = epoch;
            snapshot();
        }
        if (epoch - history.best_epoch >= cfg.patience) {
            history.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    for (std::size_t i = 0; i < trainable.size(); ++i) trainable[i]->value = best_snapshot[i];
    return history;
}

std::vector<std::vector<double>> cross_eval(std::span<const Network<float>* const> models,
                                            std::span<ImageSource* const> datasets, const AugmentConfig& augment) {
    std::vector<std::vector<double>> out;
    for (const auto* m : models) {
        std::vector<double> row;
        for (auto* d : datasets) row.push_back(evaluate(*m, *d, Split::test, augment).report.accuracy);
        out.push_back(std::move(row));
    }
    return out;
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,train_loss,val_loss,val_acc\n";
    out.precision(9);
    for (const auto& e : history.epochs) {
        out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_accuracy << '\n';
    }
}

void write_predictions_tsv(const EvalResult& result, const DatasetManifest& manifest,
                           const std::vector<std::string>& class_names, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    const std::size_t k = result.scores.rank() == 2 ? result.scores.dim(1) : 0;
    auto name = [&](int c) {
        return static_cast<std::size_t>(c) < class_names.size() ? class_names[static_cast<std::size_t>(c)]
                                                                 : std::to_string(c);
    };
    out << "path\ttrue\tpred";
    for (std::size_t c = 0; c < k; ++c) out << '\t' << "score_" << name(static_cast<int>(c));
    out << '\n';
    out.precision(9);
    for (std::size_t i = 0; i < result.preds.size(); ++i) {
        out << manifest.samples.at(result.indices[i]).path << '\t' << name(result.labels[i]) << '\t'
            << name(result.preds[i]);
        for (std::size_t c = 0; c < k; ++c) out << '\t' << result.scores(i, c);
        out << '\n';
    }
}

std::vector<PredictionRow> read_predictions_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<PredictionRow> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        PredictionRow r;
        if (!std::getline(ls, r.path, '\t') || !std::getline(ls, r.truth, '\t') || !std::getline(ls, r.pred, '\t')) {
            if (r.pred.empty()) throw IoError("malformed prediction row in " + path.string());
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace lcnx
