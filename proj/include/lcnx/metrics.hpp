// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lcnx {

enum class Averaging { micro, macro, weighted };

Averaging parse_averaging(const std::string& name);
std::string to_string(Averaging a);

/// K x K counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = 0);

    int num_classes() const noexcept { return k_; }
    std::int64_t at(int truth, int pred) const { return counts_[index(truth, pred)]; }
    void add(int truth, int pred, std::int64_t n = 1);
    std::int64_t total() const noexcept;
    std::int64_t trace() const noexcept;
    std::int64_t row_sum(int truth) const;
    std::int64_t col_sum(int pred) const;

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t index(int truth, int pred) const;

    int k_ = 0;
    std::vector<std::int64_t> counts_;
};

/// Throws ConfigError when a value lies outside [0, K).
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, int num_classes);

/// One-vs-rest reduction for class k.
struct ClassStats {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t support = 0; ///< tp + fn
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Per-class statistics; undefined ratios (0/0) are reported as 0.
std::vector<ClassStats> per_class_stats(const ConfusionMatrix& cm);

struct PrfScores {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

PrfScores prf1(const ConfusionMatrix& cm, Averaging averaging);

/// trace / total; throws ConfigError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

/// (TP*TN - FP*FN) / sqrt((TP+FP)(TP+FN)(TN+FP)(TN+FN)) with class 1 as the
/// positive class; 0 when any factor of the denominator is 0.
double mcc_binary(const ConfusionMatrix& cm);

/// Gorodkin's R_K statistic; identical to mcc_binary for K = 2.
double mcc_multiclass(const ConfusionMatrix& cm);

struct MetricsReport {
    ConfusionMatrix cm;
    Averaging averaging = Averaging::weighted;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double mcc = 0.0;
    std::vector<ClassStats> per_class;
    std::vector<std::string> class_names;
};

MetricsReport make_report(const ConfusionMatrix& cm, Averaging averaging = Averaging::weighted,
                          std::vector<std::string> class_names = {});

/// Machine-readable: "metric\tvalue" rows, a blank line, then the per-class table.
std::string report_tsv(const MetricsReport& report);

/// Percentages with two decimals.
std::string report_table(const MetricsReport& report);

} // namespace lcnx
