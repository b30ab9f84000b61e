// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#include "lcnx/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "lcnx/error.hpp"

namespace lcnx {

namespace {

double ratio(std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

Averaging parse_averaging(const std::string& name) {
    if (name == "micro") return Averaging::micro;
    if (name == "macro") return Averaging::macro;
    if (name == "weighted") return Averaging::weighted;
    throw ConfigError("unknown averaging mode '" + name + "' (micro|macro|weighted)");
}

std::string to_string(Averaging a) {
    switch (a) {
    case Averaging::micro:
        return "micro";
    case Averaging::macro:
        return "macro";
    case Averaging::weighted:
        return "weighted";
    }
    return "weighted";
}

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {
    if (num_classes < 0) throw ConfigError("confusion matrix: negative class count");
}

std::size_t ConfusionMatrix::index(int truth, int pred) const {
    if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_) {
        throw ConfigError("confusion matrix: class (" + std::to_string(truth) + "," + std::to_string(pred) +
                          ") out of range [0," + std::to_string(k_) + ")");
    }
    return static_cast<std::size_t>(truth) * static_cast<std::size_t>(k_) + static_cast<std::size_t>(pred);
}

void ConfusionMatrix::add(int truth, int pred, std::int64_t n) { counts_[index(truth, pred)] += n; }

std::int64_t ConfusionMatrix::total() const noexcept {
    return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::trace() const noexcept {
    std::int64_t t = 0;
    for (int k = 0; k < k_; ++k) t += counts_[static_cast<std::size_t>(k) * static_cast<std::size_t>(k_ + 1)];
    return t;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
    std::int64_t s = 0;
    for (int p = 0; p < k_; ++p) s += at(truth, p);
    return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
    std::int64_t s = 0;
    for (int t = 0; t < k_; ++t) s += at(t, pred);
    return s;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, int num_classes) {
    if (preds.size() != labels.size()) {
        throw ConfigError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                          std::to_string(labels.size()) + " labels");
    }
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < preds.size(); ++i) cm.add(labels[i], preds[i]);
    return cm;
}

std::vector<ClassStats> per_class_stats(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    std::vector<ClassStats> out(static_cast<std::size_t>(cm.num_classes()));
    for (int k = 0; k < cm.num_classes(); ++k) {
        auto& s = out[static_cast<std::size_t>(k)];
        s.tp = cm.at(k, k);
        s.fp = cm.col_sum(k) - s.tp;
        s.fn = cm.row_sum(k) - s.tp;
        s.tn = n - s.tp - s.fp - s.fn;
        s.support = s.tp + s.fn;
        s.precision = ratio(s.tp, s.tp + s.fp);
        s.recall = ratio(s.tp, s.tp + s.fn);
        // harmonic mean of precision and recall, written on the counts
        s.f1 = ratio(2 * s.tp, 2 * s.tp + s.fp + s.fn);
    }
    return out;
}

PrfScores prf1(const ConfusionMatrix& cm, Averaging averaging) {
    const auto stats = per_class_stats(cm);
    const std::int64_t n = cm.total();
    PrfScores out;
    switch (averaging) {
    case Averaging::micro: {
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (const auto& s : stats) {
            tp += s.tp;
            fp += s.fp;
            fn += s.fn;
        }
        out.precision = ratio(tp, tp + fp);
        out.recall = ratio(tp, tp + fn);
        out.f1 = ratio(2 * tp, 2 * tp + fp + fn);
        break;
    }
    case Averaging::macro: {
        if (stats.empty()) break;
        for (const auto& s : stats) {
            out.precision += s.precision;
            out.recall += s.recall;
            out.f1 += s.f1;
        }
        const double k = static_cast<double>(stats.size());
        out.precision /= k;
        out.recall /= k;
        out.f1 /= k;
        break;
    }
    case Averaging::weighted: {
        if (n == 0) break;
        std::int64_t tp = 0;
        for (const auto& s : stats) {
            out.precision += static_cast<double>(s.support) * s.precision;
            out.f1 += static_cast<double>(s.support) * s.f1;
            tp += s.tp; // support * recall == tp for every class
        }
        out.precision /= static_cast<double>(n);
        out.f1 /= static_cast<double>(n);
        out.recall = ratio(tp, n);
        break;
    }
    }
    return out;
}

double accuracy(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ConfigError("accuracy: empty confusion matrix");
    return ratio(cm.trace(), cm.total());
}

double mcc_binary(const ConfusionMatrix& cm) {
    if (cm.num_classes() != 2) {
        throw ConfigError("mcc_binary: needs a 2x2 matrix, got K=" + std::to_string(cm.num_classes()));
    }
    const double tp = static_cast<double>(cm.at(1, 1));
    const double tn = static_cast<double>(cm.at(0, 0));
    const double fp = static_cast<double>(cm.at(0, 1));
    const double fn = static_cast<double>(cm.at(1, 0));
    const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (den == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(den);
}

double mcc_multiclass(const ConfusionMatrix& cm) {
    const int k = cm.num_classes();
    const std::int64_t s = cm.total();
    const std::int64_t c = cm.trace();
    std::int64_t pt = 0, pp = 0, tt = 0;
    for (int i = 0; i < k; ++i) {
        const std::int64_t p = cm.col_sum(i);
        const std::int64_t t = cm.row_sum(i);
        pt += p * t;
        pp += p * p;
        tt += t * t;
    }
    const double cov_xy = static_cast<double>(c * s - pt);
    const double cov_xx = static_cast<double>(s * s - pp);
    const double cov_yy = static_cast<double>(s * s - tt);
    if (cov_xx == 0.0 || cov_yy == 0.0) return 0.0;
    return cov_xy / std::sqrt(cov_xx * cov_yy);
}

MetricsReport make_report(const ConfusionMatrix& cm, Averaging averaging, std::vector<std::string> class_names) {
    MetricsReport r;
    r.cm = cm;
    r.averaging = averaging;
    r.accuracy = accuracy(cm);
    const auto prf = prf1(cm, averaging);
    r.precision = prf.precision;
    r.recall = prf.recall;
    r.f1 = prf.f1;
    r.mcc = mcc_multiclass(cm);
    r.per_class = per_class_stats(cm);
    r.class_names = std::move(class_names);
    return r;
}

namespace {

std::string class_label(const MetricsReport& r, std::size_t k) {
    return k < r.class_names.size() ? r.class_names[k] : std::to_string(k);
}

} // namespace

std::string report_tsv(const MetricsReport& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "metric\tvalue\n";
    os << "averaging\t" << to_string(r.averaging) << '\n';
    os << "samples\t" << r.cm.total() << '\n';
    os << "accuracy\t" << r.accuracy << '\n';
    os << "precision\t" << r.precision << '\n';
    os << "recall\t" << r.recall << '\n';
    os << "f1\t" << r.f1 << '\n';
    os << "mcc\t" << r.mcc << '\n';
    os << '\n';
    os << "class\tsupport\tprecision\trecall\tf1\n";
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        const auto& s = r.per_class[k];
        os << class_label(r, k) << '\t' << s.support << '\t' << s.precision << '\t' << s.recall << '\t' << s.f1
           << '\n';
    }
    return os.str();
}

std::string report_table(const MetricsReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "averaging: " << to_string(r.averaging) << "  samples: " << r.cm.total() << '\n';
    os << "Prec.   Rec.    F1      Acc.    MCC\n";
    os << std::setw(6) << 100.0 * r.precision << "  " << std::setw(6) << 100.0 * r.recall << "  " << std::setw(6)
       << 100.0 * r.f1 << "  " << std::setw(6) << 100.0 * r.accuracy << "  " << std::setw(6) << 100.0 * r.mcc
       << '\n';
    os << "\nper class (precision / recall / f1, support)\n";
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        const auto& s = r.per_class[k];
        os << "  " << std::left << std::setw(16) << class_label(r, k) << std::right << std::setw(7)
           << 100.0 * s.precision << std::setw(8) << 100.0 * s.recall << std::setw(8) << 100.0 * s.f1 << "  ("
           << s.support << ")\n";
    }
    return os.str();
}

} // namespace lcnx
