#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tsda/common.hpp"
#include "tsda/tensor.hpp"

namespace tsda {

struct MetricPair {
    double macro_f1 = 0.0;
    double accuracy = 0.0;
};

// Unweighted mean of per-class F1. A class absent from both y_true and
// y_pred is excluded from the mean; a class present but never predicted (or
// predicted but never true) contributes 0.
inline double macro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred, long k) {
    require(!y_true.empty(), "macro_f1: empty input");
    require(y_true.size() == y_pred.size(), "macro_f1: length mismatch");
    std::vector<long> tp(static_cast<std::size_t>(k), 0), fp(static_cast<std::size_t>(k), 0),
        fn(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        int t = y_true[i], p = y_pred[i];
        require(t >= 0 && t < k && p >= 0 && p < k, "macro_f1: label out of range");
        if (t == p) {
            ++tp[static_cast<std::size_t>(t)];
        } else {
            ++fn[static_cast<std::size_t>(t)];
            ++fp[static_cast<std::size_t>(p)];
        }
    }
    double sum = 0.0;
    long present = 0;
    for (long c = 0; c < k; ++c) {
        auto i = static_cast<std::size_t>(c);
        if (tp[i] + fp[i] + fn[i] == 0) continue;  // absent from both
        ++present;
        if (tp[i] > 0)
            sum += 2.0 * tp[i] / static_cast<double>(2 * tp[i] + fp[i] + fn[i]);
    }
    return present ? sum / present : 0.0;
}

inline double accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    require(!y_true.empty(), "accuracy: empty input");
    require(y_true.size() == y_pred.size(), "accuracy: length mismatch");
    long hit = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i)
        if (y_true[i] == y_pred[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(y_true.size());
}

inline std::vector<int> argmax_rows(const Tensor<float>& probs) {
    std::vector<int> out(static_cast<std::size_t>(probs.dim(0)));
    for (long i = 0; i < probs.dim(0); ++i) {
        int best = 0;
        for (long j = 1; j < probs.dim(1); ++j)
            if (probs.at(i, j) > probs.at(i, best)) best = static_cast<int>(j);
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

struct DomainGapRow {
    std::string dataset;
    double target_only = 0.0;  // same-domain (upper) bound
    double source_only = 0.0;  // cross-domain (lower) bound
    double gap = 0.0;          // always recomputed, never copied
    std::optional<double> reference_gap;  // externally published figure, if any
};

// gap = target_only - source_only. Both bounds must share a scale: ratio
// [0,1] or percent [0,100].
inline DomainGapRow domain_gap(double target_only_f1, double source_only_f1,
                               std::string dataset = {},
                               std::optional<double> reference_gap = std::nullopt) {
    require(target_only_f1 >= 0.0 && target_only_f1 <= 100.0 && source_only_f1 >= 0.0 &&
                source_only_f1 <= 100.0,
            "domain_gap: bounds outside [0,100]");
    bool t_pct = target_only_f1 > 1.0, s_pct = source_only_f1 > 1.0;
    require(t_pct == s_pct || target_only_f1 == source_only_f1,
            "domain_gap: mixed ratio/percent scales");
    DomainGapRow row;
    row.dataset = std::move(dataset);
    row.target_only = target_only_f1;
    row.source_only = source_only_f1;
    row.gap = target_only_f1 - source_only_f1;
    row.reference_gap = reference_gap;
    return row;
}

// A published gap disagreeing with the recomputed difference beyond printing
// precision gets flagged in reports.
inline bool gap_inconsistent(const DomainGapRow& row, double tol = 5e-3) {
    return row.reference_gap && std::abs(*row.reference_gap - row.gap) > tol;
}

}  // namespace tsda
