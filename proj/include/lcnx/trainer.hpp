// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lcnx/dataset.hpp"
#include "lcnx/metrics.hpp"
#include "lcnx/network.hpp"

namespace lcnx {

struct TrainConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05; ///< weights and adapter matrices only; norms, biases and GRN are not decayed
    int max_epochs = 30;
    int batch_size = 32;
    int patience = 5;
    std::uint64_t seed = 0;

    void validate() const;
};

/// First and second moment estimates for one tensor.
template <typename T>
struct AdamSlot {
    NdArray<T> m, v;
};

/// p <- p - lr*wd*p (when `decay`), then the bias-corrected Adam update for
/// step t >= 1. Throws NumericError on a non-finite gradient.
template <typename T>
void adamw_step(NdArray<T>& param, const NdArray<T>& grad, AdamSlot<T>& slot, long t, const TrainConfig& cfg,
                bool decay);

/// AdamW over the trainable parameters of a network.
template <typename T>
class AdamW {
public:
    explicit AdamW(TrainConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    /// grads[i] may be null (treated as zero).
    void step(std::span<Parameter<T>* const> params, std::span<const NdArray<T>* const> grads);
    long steps() const noexcept { return t_; }

private:
    TrainConfig cfg_;
    long t_ = 0;
    std::vector<AdamSlot<T>> slots_;
};

struct EpochRecord {
    int epoch = 0;            ///< 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0; ///< value used for model selection
    double measured_val_accuracy = 0.0;
    double wall_time = 0.0;   ///< seconds
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0; ///< 1-based; earliest epoch with the highest val accuracy
    double best_val_accuracy = 0.0;
    bool stopped_early = false;
};

struct TrainHooks {
    /// Replaces the measured validation accuracy of an epoch (testing aid).
    std::function<double(int epoch, double measured)> val_accuracy_override;
    std::function<void(const EpochRecord&)> on_epoch_end;
};

/// Single-batch optimization on a network's trainable parameters.
class Trainer {
public:
    Trainer(Network<float>& net, TrainConfig cfg);

    /// Forward in train mode, cross-entropy, backward, AdamW. Returns the loss.
    double train_step(const Batch& batch);

private:
    Network<float>& net_;
    AdamW<float> opt_;
    std::mt19937_64 dropout_rng_;
};

/// Epoch loop with early stopping on validation accuracy. On return the
/// network holds the parameters of the best epoch.
TrainHistory train(Network<float>& net, ImageSource& source, const TrainConfig& cfg, const AugmentConfig& augment,
                   const TrainHooks& hooks = {});

struct EvalResult {
    MetricsReport report;
    double loss = 0.0;
    std::vector<std::size_t> indices; ///< manifest indices
    std::vector<int> labels;          ///< in the model's class space
    std::vector<int> preds;
    NdArray<float> scores;            ///< [N, K] softmax probabilities
};

/// dataset class id -> model class id, matched by name. Throws
/// CompatibilityError when a dataset class is unknown to the model. A model
/// without class names is matched positionally.
std::vector<int> class_mapping(const std::vector<std::string>& model_classes,
                               const std::vector<std::string>& dataset_classes, int model_num_classes);

/// Eval-mode forward over a split, argmax predictions and metrics.
EvalResult evaluate(const Network<float>& net, ImageSource& source, Split split, const AugmentConfig& augment,
                    Averaging averaging = Averaging::weighted, int batch_size = 64);

/// Entry (i, j): accuracy of model i on the test split of dataset j.
std::vector<std::vector<double>> cross_eval(std::span<const Network<float>* const> models,
                                            std::span<ImageSource* const> datasets, const AugmentConfig& augment);

/// epoch,train_loss,val_loss,val_acc
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

/// path \t true \t pred \t one score column per class
void write_predictions_tsv(const EvalResult& result, const DatasetManifest& manifest,
                           const std::vector<std::string>& class_names, const std::filesystem::path& path);

struct PredictionRow {
    std::string path;
    std::string truth;
    std::string pred;
};

std::vector<PredictionRow> read_predictions_tsv(const std::filesystem::path& path);

} // namespace lcnx
