#include "fiberseg/classic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

namespace fiberseg {

void ClassicParams::validate() const {
    if (otsu_classes < 2) throw InvalidSpec("ClassicParams: otsu_classes must be >= 2");
    const int fc = fiber_class < 0 ? otsu_classes : fiber_class;
    if (fc < 1 || fc > otsu_classes)
        throw InvalidSpec("ClassicParams: fiber_class out of range");
    if (tv_weight < 0) throw InvalidSpec("ClassicParams: tv_weight must be >= 0");
    if (wusem_delta_radius < 1) throw InvalidSpec("ClassicParams: wusem_delta_radius must be >= 1");
    if (wusem_initial_radius < 0) throw InvalidSpec("ClassicParams: wusem_initial_radius must be >= 0");
    if (equalize_bins < 2) throw InvalidSpec("ClassicParams: equalize_bins must be >= 2");
}

namespace {

inline int bin_of(float v, int bins) {
    int b = static_cast<int>(std::clamp(v, 0.0f, 1.0f) * static_cast<float>(bins));
    return std::min(b, bins - 1);
}

}  // namespace

FloatArray equalize_histogram(const FloatArray& field, int bins) {
    if (bins < 2) throw InvalidSpec("equalize_histogram: bins must be >= 2");
    const int64_t n = field.size();
    std::vector<int64_t> hist(static_cast<size_t>(bins), 0);
    for (int64_t i = 0; i < n; ++i) ++hist[static_cast<size_t>(bin_of(field[i], bins))];

    std::vector<float> cdf(static_cast<size_t>(bins));
    int64_t cum = 0;
    for (int b = 0; b < bins; ++b) {
        cum += hist[static_cast<size_t>(b)];
        cdf[static_cast<size_t>(b)] = static_cast<float>(cum) / static_cast<float>(n);
    }
    FloatArray out(field.shape());
    for (int64_t i = 0; i < n; ++i) out[i] = cdf[static_cast<size_t>(bin_of(field[i], bins))];
    return out;
}

double total_variation(const FloatArray& f) {
    if (f.rank() != 2) throw ShapeMismatch("total_variation: 2D only");
    const int64_t H = f.extent(0), W = f.extent(1);
    double tv = 0.0;
    for (int64_t r = 0; r < H; ++r)
        for (int64_t c = 0; c < W; ++c) {
            const double dy = r + 1 < H ? f(r + 1, c) - f(r, c) : 0.0;
            const double dx = c + 1 < W ? f(r, c + 1) - f(r, c) : 0.0;
            tv += std::sqrt(dy * dy + dx * dx);
        }
    return tv;
}

TvResult denoise_tv_chambolle(const FloatArray& f, float weight, int max_iter, float tol) {
    if (f.rank() != 2) throw ShapeMismatch("denoise_tv_chambolle: 2D only");
    if (weight < 0) throw InvalidSpec("denoise_tv_chambolle: weight must be >= 0");
    TvResult res{f, true, 0};
    if (weight == 0.0f || f.size() == 1) return res;

    const int64_t H = f.extent(0), W = f.extent(1);
    const double lam = weight;
    const double tau = 0.25;

    // dual field p = (py, px)
    std::vector<double> py(static_cast<size_t>(H * W), 0.0);
    std::vector<double> px(static_cast<size_t>(H * W), 0.0);
    std::vector<double> div_p(static_cast<size_t>(H * W), 0.0);
    std::vector<double> gy(static_cast<size_t>(H * W), 0.0);
    std::vector<double> gx(static_cast<size_t>(H * W), 0.0);

    auto at = [W](int64_t r, int64_t c) { return static_cast<size_t>(r * W + c); };

    int it = 0;
    bool converged = false;
    for (; it < max_iter; ++it) {
        // div p with backward differences (adjoint of forward-difference grad)
        for (int64_t r = 0; r < H; ++r)
            for (int64_t c = 0; c < W; ++c) {
                double d = 0.0;
                d += py[at(r, c)] - (r > 0 ? py[at(r - 1, c)] : 0.0);
                d += px[at(r, c)] - (c > 0 ? px[at(r, c - 1)] : 0.0);
                div_p[at(r, c)] = d;
            }
        // g = grad(div p - f / lambda), forward differences
        for (int64_t r = 0; r < H; ++r)
            for (int64_t c = 0; c < W; ++c) {
                const double v = div_p[at(r, c)] - f(r, c) / lam;
                const double vy = r + 1 < H ? (div_p[at(r + 1, c)] - f(r + 1, c) / lam) - v : 0.0;
                const double vx = c + 1 < W ? (div_p[at(r, c + 1)] - f(r, c + 1) / lam) - v : 0.0;
                gy[at(r, c)] = vy;
                gx[at(r, c)] = vx;
            }
        double change = 0.0, norm = 0.0;
        for (size_t i = 0; i < py.size(); ++i) {
            const double denom = 1.0 + tau * std::sqrt(gy[i] * gy[i] + gx[i] * gx[i]);
            const double ny = (py[i] + tau * gy[i]) / denom;
            const double nx = (px[i] + tau * gx[i]) / denom;
            change += (ny - py[i]) * (ny - py[i]) + (nx - px[i]) * (nx - px[i]);
            norm += ny * ny + nx * nx;
            py[i] = ny;
            px[i] = nx;
        }
        if (norm > 0 && std::sqrt(change / norm) < tol) {
            converged = true;
            ++it;
            break;
        }
        if (norm == 0.0) {  // constant image: dual stays zero
            converged = true;
            ++it;
            break;
        }
    }

    // u = f - lambda * div p
    for (int64_t r = 0; r < H; ++r)
        for (int64_t c = 0; c < W; ++c) {
            double d = py[at(r, c)] - (r > 0 ? py[at(r - 1, c)] : 0.0);
            d += px[at(r, c)] - (c > 0 ? px[at(r, c - 1)] : 0.0);
            res.field(r, c) = static_cast<float>(f(r, c) - lam * d);
        }
    res.converged = converged;
    res.iterations = it;
    return res;
}

std::vector<float> multi_otsu(const FloatArray& field, int classes, int bins) {
    if (classes < 2) throw InvalidSpec("multi_otsu: classes must be >= 2");
    const int64_t n = field.size();
    std::vector<int64_t> hist(static_cast<size_t>(bins), 0);
    for (int64_t i = 0; i < n; ++i) ++hist[static_cast<size_t>(bin_of(field[i], bins))];

    int nonempty = 0;
    for (int64_t h : hist) nonempty += h > 0 ? 1 : 0;
    if (nonempty < classes)
        throw DegenerateHistogram("multi_otsu: fewer distinct values than classes");

    // cumulative zeroth and first moments
    std::vector<double> P(static_cast<size_t>(bins + 1), 0.0);
    std::vector<double> S(static_cast<size_t>(bins + 1), 0.0);
    for (int b = 0; b < bins; ++b) {
        const double p = static_cast<double>(hist[static_cast<size_t>(b)]) / static_cast<double>(n);
        P[static_cast<size_t>(b + 1)] = P[static_cast<size_t>(b)] + p;
        S[static_cast<size_t>(b + 1)] = S[static_cast<size_t>(b)] + p * b;
    }
    // H(i, j): modified between-class variance term of the class [i, j]
    auto H = [&](int i, int j) {
        const double w = P[static_cast<size_t>(j + 1)] - P[static_cast<size_t>(i)];
        if (w <= 0.0) return 0.0;
        const double s = S[static_cast<size_t>(j + 1)] - S[static_cast<size_t>(i)];
        return s * s / w;
    };

    const int k = classes - 1;  // number of thresholds
    std::vector<int> th(static_cast<size_t>(k), 0);
    std::vector<int> best(static_cast<size_t>(k), 0);
    double best_score = -1.0;

    // exhaustive search over threshold bins with the lookup recurrence
    std::function<void(int, int, double)> search = [&](int level, int start, double acc) {
        if (level == k) {
            const double score = acc + H(start, bins - 1);
            if (score > best_score) {
                best_score = score;
                best = th;
            }
            return;
        }
        for (int t = start; t <= bins - 1 - (k - level); ++t) {
            th[static_cast<size_t>(level)] = t;
            search(level + 1, t + 1, acc + H(start, t));
        }
    };
    search(0, 0, 0.0);

    std::vector<float> out(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i)
        out[static_cast<size_t>(i)] = static_cast<float>(best[static_cast<size_t>(i)] + 1) / static_cast<float>(bins);
    return out;
}

MaskArray binarize_class(const FloatArray& field, const std::vector<float>& thresholds,
                         int fiber_class) {
    const int classes = static_cast<int>(thresholds.size()) + 1;
    if (fiber_class < 1 || fiber_class > classes)
        throw InvalidSpec("binarize_class: fiber_class out of range");
    MaskArray out(field.shape());
    const int64_t n = field.size();
    for (int64_t i = 0; i < n; ++i) {
        // values equal to a threshold join the upper class
        int cls = 1;
        for (float t : thresholds)
            if (field[i] >= t) ++cls;
        out[i] = cls == fiber_class ? 1 : 0;
    }
    return out;
}

NdArray<int64_t> squared_edt(const MaskArray& mask) {
    if (mask.rank() != 2) throw ShapeMismatch("squared_edt: 2D only");
    const int64_t H = mask.extent(0), W = mask.extent(1);
    const int64_t INF = std::numeric_limits<int64_t>::max() / 4;
    NdArray<int64_t> d({H, W});
    for (int64_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? INF : 0;

    // Felzenszwalb-Huttenlocher 1D squared distance transform, per axis
    auto dt1d = [&INF](std::vector<int64_t>& f) {
        const int n = static_cast<int>(f.size());
        std::vector<int> v(static_cast<size_t>(n));
        std::vector<double> z(static_cast<size_t>(n + 1));
        std::vector<int64_t> out(static_cast<size_t>(n));
        int q = 0;
        v[0] = 0;
        z[0] = -1e30;
        z[1] = 1e30;
        for (int i = 1; i < n; ++i) {
            double s;
            while (true) {
                const int vq = v[static_cast<size_t>(q)];
                s = (static_cast<double>(f[static_cast<size_t>(i)] - f[static_cast<size_t>(vq)]) +
                     static_cast<double>(i) * i - static_cast<double>(vq) * vq) /
                    (2.0 * (i - vq));
                if (s <= z[static_cast<size_t>(q)]) { --q; } else break;
            }
            ++q;
            v[static_cast<size_t>(q)] = i;
            z[static_cast<size_t>(q)] = s;
            z[static_cast<size_t>(q + 1)] = 1e30;
        }
        q = 0;
        for (int i = 0; i < n; ++i) {
            while (z[static_cast<size_t>(q + 1)] < i) ++q;
            const int vq = v[static_cast<size_t>(q)];
            const int64_t dist2 = static_cast<int64_t>(i - vq) * (i - vq) + f[static_cast<size_t>(vq)];
            out[static_cast<size_t>(i)] = std::min(dist2, INF);
        }
        f = out;
    };

    std::vector<int64_t> line;
    // columns
    line.resize(static_cast<size_t>(H));
    for (int64_t c = 0; c < W; ++c) {
        for (int64_t r = 0; r < H; ++r) line[static_cast<size_t>(r)] = d(r, c);
        dt1d(line);
        for (int64_t r = 0; r < H; ++r) d(r, c) = line[static_cast<size_t>(r)];
    }
    // rows
    line.resize(static_cast<size_t>(W));
    for (int64_t r = 0; r < H; ++r) {
        for (int64_t c = 0; c < W; ++c) line[static_cast<size_t>(c)] = d(r, c);
        dt1d(line);
        for (int64_t c = 0; c < W; ++c) d(r, c) = line[static_cast<size_t>(c)];
    }
    return d;
}

MaskArray erode_disk(const MaskArray& mask, int radius) {
    if (radius < 0) throw InvalidSpec("erode_disk: radius must be >= 0");
    if (radius == 0) return mask;
    auto d2 = squared_edt(mask);
    MaskArray out(mask.shape());
    const int64_t r2 = static_cast<int64_t>(radius) * radius;
    for (int64_t i = 0; i < mask.size(); ++i)
        out[i] = (mask[i] && d2[i] > r2) ? 1 : 0;
    return out;
}

LabelArray connected_components(const MaskArray& mask) {
    const int rank = mask.rank();
    if (rank != 2 && rank != 3) throw ShapeMismatch("connected_components: 2D/3D only");
    LabelArray labels(mask.shape(), 0);
    const int64_t n = mask.size();
    std::vector<int64_t> stack;
    int32_t next = 0;

    if (rank == 2) {
        const int64_t H = mask.extent(0), W = mask.extent(1);
        for (int64_t i = 0; i < n; ++i) {
            if (!mask[i] || labels[i]) continue;
            ++next;
            labels[i] = next;
            stack.push_back(i);
            while (!stack.empty()) {
                const int64_t p = stack.back();
                stack.pop_back();
                const int64_t r = p / W, c = p % W;
                const int64_t nb[4] = {r > 0 ? p - W : -1, r + 1 < H ? p + W : -1,
                                       c > 0 ? p - 1 : -1, c + 1 < W ? p + 1 : -1};
                for (int64_t q : nb)
                    if (q >= 0 && mask[q] && !labels[q]) {
                        labels[q] = next;
                        stack.push_back(q);
                    }
            }
        }
    } else {
        const int64_t D = mask.extent(0), H = mask.extent(1), W = mask.extent(2);
        const int64_t HW = H * W;
        for (int64_t i = 0; i < n; ++i) {
            if (!mask[i] || labels[i]) continue;
            ++next;
            labels[i] = next;
            stack.push_back(i);
            while (!stack.empty()) {
                const int64_t p = stack.back();
                stack.pop_back();
                const int64_t z = p / HW, rem = p % HW, r = rem / W, c = rem % W;
                const int64_t nb[6] = {z > 0 ? p - HW : -1, z + 1 < D ? p + HW : -1,
                                       r > 0 ? p - W : -1, r + 1 < H ? p + W : -1,
                                       c > 0 ? p - 1 : -1, c + 1 < W ? p + 1 : -1};
                for (int64_t q : nb)
                    if (q >= 0 && mask[q] && !labels[q]) {
                        labels[q] = next;
                        stack.push_back(q);
                    }
            }
        }
    }
    return labels;
}

int32_t max_label(const LabelArray& labels) {
    int32_t m = 0;
    for (int64_t i = 0; i < labels.size(); ++i) m = std::max(m, labels[i]);
    return m;
}

namespace {

constexpr int32_t kWatershedLine = -1;

struct FloodItem {
    int64_t sq_dist;   // larger distance floods first
    uint64_t age;      // FIFO tie-break for determinism
    int64_t pixel;
    int32_t label;
};

struct FloodOrder {
    bool operator()(const FloodItem& a, const FloodItem& b) const {
        if (a.sq_dist != b.sq_dist) return a.sq_dist < b.sq_dist;  // max-heap on distance
        return a.age > b.age;
    }
};

LabelArray relabel_raster(const LabelArray& in) {
    LabelArray out(in.shape(), 0);
    std::vector<int32_t> remap(static_cast<size_t>(max_label(in)) + 1, 0);
    int32_t next = 0;
    for (int64_t i = 0; i < in.size(); ++i) {
        const int32_t l = in[i];
        if (l <= 0) continue;
        if (!remap[static_cast<size_t>(l)]) remap[static_cast<size_t>(l)] = ++next;
        out[i] = remap[static_cast<size_t>(l)];
    }
    return out;
}

}  // namespace

LabelArray watershed(const NdArray<int64_t>& sq_dist, const LabelArray& markers,
                     const MaskArray& mask, bool watershed_line) {
    if (mask.rank() != 2) throw ShapeMismatch("watershed: 2D only");
    require_same_shape(sq_dist.shape(), mask.shape(), "watershed");
    require_same_shape(markers.shape(), mask.shape(), "watershed");

    const int64_t H = mask.extent(0), W = mask.extent(1);
    LabelArray out(mask.shape(), 0);
    std::priority_queue<FloodItem, std::vector<FloodItem>, FloodOrder> queue;
    uint64_t age = 0;

    for (int64_t i = 0; i < mask.size(); ++i) {
        if (markers[i] > 0 && mask[i]) {
            out[i] = markers[i];
            queue.push({sq_dist[i], age++, i, markers[i]});
        }
    }

    auto neighbors = [&](int64_t p, int64_t nb[4]) {
        const int64_t r = p / W, c = p % W;
        nb[0] = r > 0 ? p - W : -1;
        nb[1] = r + 1 < H ? p + W : -1;
        nb[2] = c > 0 ? p - 1 : -1;
        nb[3] = c + 1 < W ? p + 1 : -1;
    };

    int64_t nb[4];
    while (!queue.empty()) {
        const FloodItem item = queue.top();
        queue.pop();
        neighbors(item.pixel, nb);
        for (int64_t q : nb) {
            if (q < 0 || !mask[q] || out[q] != 0) continue;
            if (watershed_line) {
                int64_t qnb[4];
                neighbors(q, qnb);
                bool conflict = false;
                for (int64_t t : qnb)
                    if (t >= 0 && out[t] > 0 && out[t] != item.label) conflict = true;
                if (conflict) {
                    out[q] = kWatershedLine;
                    continue;
                }
            }
            out[q] = item.label;
            queue.push({sq_dist[q], age++, q, item.label});
        }
    }
    for (int64_t i = 0; i < out.size(); ++i)
        if (out[i] == kWatershedLine) out[i] = 0;
    return out;
}

LabelArray wusem(const MaskArray& mask, int initial_radius, int delta_radius,
                 bool watershed_line) {
    if (mask.rank() != 2) throw ShapeMismatch("wusem: 2D only");
    if (delta_radius < 1) throw InvalidSpec("wusem: delta_radius must be >= 1");
    if (initial_radius < 0) throw InvalidSpec("wusem: initial_radius must be >= 0");

    bool any = false;
    for (int64_t i = 0; i < mask.size(); ++i)
        if (mask[i]) { any = true; break; }
    if (!any) return LabelArray(mask.shape(), 0);

    const auto d2 = squared_edt(mask);

    // erosion levels until empty; r = 0 is the identity erosion
    std::vector<MaskArray> levels;
    for (int r = initial_radius;; r += delta_radius) {
        const int64_t r2 = static_cast<int64_t>(r) * r;
        MaskArray eroded(mask.shape());
        bool nonempty = false;
        for (int64_t i = 0; i < mask.size(); ++i) {
            const uint8_t v = (mask[i] && (r == 0 || d2[i] > r2)) ? 1 : 0;
            eroded[i] = v;
            nonempty = nonempty || v;
        }
        if (!nonempty) break;
        levels.push_back(std::move(eroded));
    }

    // a component becomes a marker when it has no descendant at the next level
    LabelArray marker_map(mask.shape(), 0);
    int32_t next_marker = 0;
    for (size_t li = 0; li < levels.size(); ++li) {
        LabelArray comps = connected_components(levels[li]);
        const int32_t k = max_label(comps);
        std::vector<char> survives(static_cast<size_t>(k) + 1, 0);
        if (li + 1 < levels.size()) {
            const MaskArray& nxt = levels[li + 1];
            for (int64_t i = 0; i < comps.size(); ++i)
                if (nxt[i] && comps[i] > 0) survives[static_cast<size_t>(comps[i])] = 1;
        }
        std::vector<int32_t> assigned(static_cast<size_t>(k) + 1, 0);
        for (int64_t i = 0; i < comps.size(); ++i) {
            const int32_t c = comps[i];
            if (c <= 0 || survives[static_cast<size_t>(c)]) continue;
            if (!assigned[static_cast<size_t>(c)]) assigned[static_cast<size_t>(c)] = ++next_marker;
            marker_map[i] = assigned[static_cast<size_t>(c)];
        }
    }

    LabelArray labels = watershed(d2, marker_map, mask, watershed_line);
    return relabel_raster(labels);
}

LabelArray segment_classic(const FloatArray& slice, const ClassicParams& params) {
    if (slice.rank() != 2) throw ShapeMismatch("segment_classic: 2D only");
    params.validate();

    FloatArray eq = equalize_histogram(slice, params.equalize_bins);
    FloatArray tv = denoise_tv_chambolle(eq, params.tv_weight, params.tv_max_iter,
                                         params.tv_tol).field;
    const auto thresholds = multi_otsu(tv, params.otsu_classes);
    const int fiber = params.fiber_class < 0 ? params.otsu_classes : params.fiber_class;
    MaskArray mask = binarize_class(tv, thresholds, fiber);

    if (params.roi) {
        const auto& roi = *params.roi;
        for (int64_t r = 0; r < mask.extent(0); ++r)
            for (int64_t c = 0; c < mask.extent(1); ++c) {
                const double dy = static_cast<double>(r) - roi.center_y;
                const double dx = static_cast<double>(c) - roi.center_x;
                if (dy * dy + dx * dx > roi.radius * roi.radius) mask(r, c) = 0;
            }
    }
    return wusem(mask, params.wusem_initial_radius, params.wusem_delta_radius,
                 params.watershed_line);
}

}  // namespace fiberseg
