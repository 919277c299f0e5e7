#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "fiberseg/array.hpp"

namespace fiberseg {

struct ConfusionCounts {
    uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

    uint64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp; fp += o.fp; tn += o.tn; fn += o.fn;
        return *this;
    }
};

struct RocPoint {
    double fpr = 0.0, tpr = 0.0, threshold = 0.0;
};

struct SliceMetrics {
    ConfusionCounts confusion;
    double dice = 0.0;
    double matthews = 0.0;
    bool both_empty = false;       // neither pred nor gold had foreground
    double auc = 0.0;              // only filled when scores were supplied
    bool has_auc = false;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample std (n-1); 0 for n < 2
};

struct MetricsReport {
    std::vector<SliceMetrics> slices;
    ConfusionCounts total;
    MeanStd dice;           // over all slices (both-empty slices count as 1.0)
    MeanStd matthews;
    MeanStd dice_excl;      // aggregates excluding both-empty slices
    MeanStd matthews_excl;
    MeanStd auc;            // only meaningful when scores were supplied
    size_t both_empty_count = 0;
};

ConfusionCounts confusion(const MaskArray& pred, const MaskArray& gold);

// 2TP / (2TP + FP + FN); both-empty (no foreground anywhere) is defined as 1.0.
double dice(const ConfusionCounts& c);
bool dice_both_empty(const ConfusionCounts& c);

// (TP*TN - FP*FN) / sqrt of the four marginal products; 0.0 when any marginal is 0.
double matthews(const ConfusionCounts& c);

// ROC by sweeping all distinct score thresholds (prediction rule: score > t),
// AUC by trapezoidal integration. Throws SingleClassGold if gold is one-class.
std::pair<std::vector<RocPoint>, double> roc_auc(const FloatArray& scores, const MaskArray& gold);

// Hard threshold: 1 where value > t (strictly above), else 0.
MaskArray threshold(const FloatArray& pred, float t = 0.5f);

MeanStd mean_std(const std::vector<double>& values);

// Streaming per-slice evaluation. pred_slice(z) yields probabilities in [0,1],
// gold_slice(z) binary gold. ROC/AUC per slice is skipped for one-class slices.
MetricsReport evaluate_stack(int64_t depth,
                             const std::function<FloatArray(int64_t)>& pred_slice,
                             const std::function<MaskArray(int64_t)>& gold_slice,
                             float thr = 0.5f);

}  // namespace fiberseg
