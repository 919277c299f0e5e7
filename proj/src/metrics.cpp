#include "fiberseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fiberseg {

ConfusionCounts confusion(const MaskArray& pred, const MaskArray& gold) {
    require_same_shape(pred.shape(), gold.shape(), "confusion");
    ConfusionCounts c;
    const uint8_t* p = pred.data();
    const uint8_t* g = gold.data();
    const int64_t n = pred.size();
    for (int64_t i = 0; i < n; ++i) {
        if (g[i]) {
            if (p[i]) ++c.tp; else ++c.fn;
        } else {
            if (p[i]) ++c.fp; else ++c.tn;
        }
    }
    return c;
}

bool dice_both_empty(const ConfusionCounts& c) {
    return c.tp + c.fp + c.fn == 0;
}

double dice(const ConfusionCounts& c) {
    const uint64_t denom = 2 * c.tp + c.fp + c.fn;
    if (denom == 0) return 1.0;  // both empty, flagged by caller
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double matthews(const ConfusionCounts& c) {
    const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
    const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
    const double m1 = tp + fn, m2 = tp + fp, m3 = tn + fn, m4 = tn + fp;
    if (m1 == 0 || m2 == 0 || m3 == 0 || m4 == 0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(m1 * m2 * m3 * m4);
}

std::pair<std::vector<RocPoint>, double> roc_auc(const FloatArray& scores, const MaskArray& gold) {
    require_same_shape(scores.shape(), gold.shape(), "roc_auc");
    const int64_t n = scores.size();

    uint64_t pos = 0;
    for (int64_t i = 0; i < n; ++i) pos += gold[i] ? 1 : 0;
    const uint64_t neg = static_cast<uint64_t>(n) - pos;
    if (pos == 0 || neg == 0)
        throw SingleClassGold("roc_auc: gold standard contains a single class");

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t{0});
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return scores[a] > scores[b];
    });

    std::vector<RocPoint> roc;
    roc.push_back({0.0, 0.0, 1.0});

    double auc = 0.0;
    uint64_t tp = 0, fp = 0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    int64_t i = 0;
    while (i < n) {
        const float t = scores[order[static_cast<size_t>(i)]];
        // consume the whole tie group; rule is score > threshold
        while (i < n && scores[order[static_cast<size_t>(i)]] == t) {
            if (gold[order[static_cast<size_t>(i)]]) ++tp; else ++fp;
            ++i;
        }
        const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
        const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        roc.push_back({fpr, tpr, static_cast<double>(t)});
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    return {std::move(roc), auc};
}

MaskArray threshold(const FloatArray& pred, float t) {
    MaskArray out(pred.shape());
    const int64_t n = pred.size();
    for (int64_t i = 0; i < n; ++i) out[i] = pred[i] > t ? 1 : 0;
    return out;
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd ms;
    const size_t n = values.size();
    if (n == 0) return ms;
    ms.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    if (n >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - ms.mean) * (v - ms.mean);
        ms.std = std::sqrt(ss / static_cast<double>(n - 1));
    }
    return ms;
}

MetricsReport evaluate_stack(int64_t depth,
                             const std::function<FloatArray(int64_t)>& pred_slice,
                             const std::function<MaskArray(int64_t)>& gold_slice,
                             float thr) {
    MetricsReport rep;
    std::vector<double> dices, mccs, dices_excl, mccs_excl, aucs;
    for (int64_t z = 0; z < depth; ++z) {
        FloatArray scores = pred_slice(z);
        MaskArray gold = gold_slice(z);
        require_same_shape(scores.shape(), gold.shape(), "evaluate_stack");

        SliceMetrics sm;
        sm.confusion = confusion(threshold(scores, thr), gold);
        sm.both_empty = dice_both_empty(sm.confusion);
        sm.dice = dice(sm.confusion);
        sm.matthews = matthews(sm.confusion);
        bool single_class = sm.confusion.tp + sm.confusion.fn == 0 ||
                            sm.confusion.tn + sm.confusion.fp == 0;
        if (!single_class) {
            sm.auc = roc_auc(scores, gold).second;
            sm.has_auc = true;
            aucs.push_back(sm.auc);
        }
        rep.total += sm.confusion;
        dices.push_back(sm.dice);
        mccs.push_back(sm.matthews);
        if (!sm.both_empty) {
            dices_excl.push_back(sm.dice);
            mccs_excl.push_back(sm.matthews);
        } else {
            ++rep.both_empty_count;
        }
        rep.slices.push_back(std::move(sm));
    }
    rep.dice = mean_std(dices);
    rep.matthews = mean_std(mccs);
    rep.dice_excl = mean_std(dices_excl);
    rep.matthews_excl = mean_std(mccs_excl);
    rep.auc = mean_std(aucs);
    return rep;
}

}  // namespace fiberseg
