// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary classification metrics with deceptive (label 1) as the positive
// class.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "veracity/error.hpp"

namespace veracity {

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::size_t total() const { return tp + fp + fn + tn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

namespace detail {

inline void check_pairs(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw ValidationError("scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
                              std::to_string(labels.size()) + ")");
    if (scores.empty()) throw ValidationError("no instances to evaluate");
    for (int l : labels)
        if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
}

}  // namespace detail

/// Scores at or above threshold count as predicted positive.
inline ConfusionMatrix confusion(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
    detail::check_pairs(scores, labels);
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (predicted) {
            (labels[i] ? cm.tp : cm.fp)++;
        } else {
            (labels[i] ? cm.fn : cm.tn)++;
        }
    }
    return cm;
}

struct PrfScores {
    double precision = 0, recall = 0, accuracy = 0, f1 = 0;
    bool precision_degenerate = false;  // tp + fp == 0
    bool recall_degenerate = false;     // tp + fn == 0
};

/// Precision, recall, accuracy and their harmonic-mean F1. Zero
/// denominators yield 0 with the matching degenerate flag set.
inline PrfScores prf_accuracy(const ConfusionMatrix& cm) {
    PrfScores s;
    const auto ratio = [](std::size_t num, std::size_t den, bool& degenerate) {
        degenerate = den == 0;
        return degenerate ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    s.precision = ratio(cm.tp, cm.tp + cm.fp, s.precision_degenerate);
    s.recall = ratio(cm.tp, cm.tp + cm.fn, s.recall_degenerate);
    s.accuracy = cm.total() == 0 ? 0.0 : static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
    s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

/// Mann-Whitney form of the ROC area: the fraction of (positive, negative)
/// pairs ranked correctly, ties counting one half. O(n log n) via average
/// ranks.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_pairs(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::size_t positives = 0;
    for (int l : labels) positives += static_cast<std::size_t>(l);
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0) throw ValidationError("ROC-AUC needs both positive and negative labels");

    // Doubled ranks keep tie averages integral: 2*rank = first + last + 2 (1-based).
    std::size_t positive_rank_sum2 = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const std::size_t rank2 = i + j + 2;
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]]) positive_rank_sum2 += rank2;
        i = j + 1;
    }
    // U = R+ - P(P+1)/2, in doubled units.
    const double u2 = static_cast<double>(positive_rank_sum2) - static_cast<double>(positives * (positives + 1));
    return u2 / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

/// Step-wise area under the precision-recall curve: sum over descending
/// unique score thresholds of (R_n - R_{n-1}) * P_n with R_0 = 0.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
    detail::check_pairs(scores, labels);
    const std::size_t n = scores.size();
    std::size_t positives = 0;
    for (int l : labels) positives += static_cast<std::size_t>(l);
    if (positives == 0) throw ValidationError("average precision needs at least one positive label");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) tp += static_cast<std::size_t>(labels[order[j++]]);
        const double recall = static_cast<double>(tp) / static_cast<double>(positives);
        const double precision = static_cast<double>(tp) / static_cast<double>(j);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

struct MetricsReport {
    double precision = 0, recall = 0, accuracy = 0, f1 = 0, roc_auc = 0, average_precision = 0;
    /// Unweighted mean of the per-class F1 scores, for comparison with
    /// reports that average over both classes.
    double macro_f1 = 0;
    ConfusionMatrix confusion;
    bool precision_degenerate = false;
    bool recall_degenerate = false;
    bool roc_auc_defined = true;
    bool average_precision_defined = true;
};

/// Full evaluation at the given threshold. Single-class inputs leave the
/// rank metrics at 0 with their defined flags cleared instead of throwing.
inline MetricsReport evaluate(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
    MetricsReport r;
    r.confusion = confusion(scores, labels, threshold);
    const auto prf = prf_accuracy(r.confusion);
    r.precision = prf.precision;
    r.recall = prf.recall;
    r.accuracy = prf.accuracy;
    r.f1 = prf.f1;
    r.precision_degenerate = prf.precision_degenerate;
    r.recall_degenerate = prf.recall_degenerate;

    // Negative-class F1 swaps the roles of the two classes.
    const ConfusionMatrix flipped{r.confusion.tn, r.confusion.fn, r.confusion.fp, r.confusion.tp};
    r.macro_f1 = 0.5 * (prf.f1 + prf_accuracy(flipped).f1);

    const bool has_pos = r.confusion.tp + r.confusion.fn > 0;
    const bool has_neg = r.confusion.tn + r.confusion.fp > 0;
    r.roc_auc_defined = has_pos && has_neg;
    r.average_precision_defined = has_pos;
    if (r.roc_auc_defined) r.roc_auc = roc_auc(scores, labels);
    if (r.average_precision_defined) r.average_precision = average_precision(scores, labels);
    return r;
}

inline void to_json(nlohmann::json& j, const ConfusionMatrix& cm) {
    j = {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}};
}

inline void from_json(const nlohmann::json& j, ConfusionMatrix& cm) {
    cm.tp = j.at("tp").get<std::size_t>();
    cm.fp = j.at("fp").get<std::size_t>();
    cm.fn = j.at("fn").get<std::size_t>();
    cm.tn = j.at("tn").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
    j = {{"precision", r.precision},
         {"recall", r.recall},
         {"accuracy", r.accuracy},
         {"f1", r.f1},
         {"roc_auc", r.roc_auc},
         {"average_precision", r.average_precision},
         {"macro_f1", r.macro_f1},
         {"confusion", r.confusion},
         {"degenerate",
          {{"precision", r.precision_degenerate},
           {"recall", r.recall_degenerate},
           {"roc_auc", !r.roc_auc_defined},
           {"average_precision", !r.average_precision_defined}}}};
}

inline void from_json(const nlohmann::json& j, MetricsReport& r) {
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.roc_auc = j.at("roc_auc").get<double>();
    r.average_precision = j.at("average_precision").get<double>();
    r.macro_f1 = j.value("macro_f1", 0.0);
    r.confusion = j.at("confusion").get<ConfusionMatrix>();
    if (j.contains("degenerate")) {
        const auto& d = j.at("degenerate");
        r.precision_degenerate = d.value("precision", false);
        r.recall_degenerate = d.value("recall", false);
        r.roc_auc_defined = !d.value("roc_auc", false);
        r.average_precision_defined = !d.value("average_precision", false);
    }
}

}  // namespace veracity
