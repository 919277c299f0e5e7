#include "fiberseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fiberseg/errors.hpp"

namespace fiberseg {

void PhantomConfig::validate() const {
    if (n_fibers < 0) throw InvalidSpec("phantom: n_fibers must be >= 0");
    if (radius_min <= 0.0 || radius_max < radius_min)
        throw InvalidSpec("phantom: need 0 < radius_min <= radius_max");
    if (depth < 1 || size < 1) throw InvalidSpec("phantom: depth and size must be >= 1");
    if (2.0 * radius_max + 2.0 >= static_cast<double>(size))
        throw InvalidSpec("phantom: fibers do not fit in the slice");
    if (noise_sigma < 0.0f) throw InvalidSpec("phantom: noise_sigma must be >= 0");
    for (int64_t z : defect_slices)
        if (z < 0 || z >= depth) throw InvalidSpec("phantom: defect slice out of range");
}

Phantom make_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);

    // rejection-sample non-overlapping centres (1 px clearance)
    std::uniform_real_distribution<double> rdist(cfg.radius_min, cfg.radius_max);
    std::vector<FiberSite> fibers;
    int attempts = 0;
    while (static_cast<int>(fibers.size()) < cfg.n_fibers) {
        if (++attempts > cfg.max_attempts)
            throw PlacementFailure("phantom: could not place " + std::to_string(cfg.n_fibers) +
                                   " fibers within " + std::to_string(cfg.max_attempts) +
                                   " attempts");
        const double r = rdist(rng);
        std::uniform_real_distribution<double> cdist(r + 1.0,
                                                     static_cast<double>(cfg.size) - r - 2.0);
        const double cx = cdist(rng), cy = cdist(rng);
        bool ok = true;
        for (const FiberSite& f : fibers) {
            const double dx = cx - f.cx, dy = cy - f.cy;
            if (std::sqrt(dx * dx + dy * dy) < r + f.radius + 1.0) {
                ok = false;
                break;
            }
        }
        if (ok) fibers.push_back({cx, cy, r});
    }

    const int64_t n = cfg.size;
    MaskArray slice_mask({n, n}, 0);
    LabelArray slice_labels({n, n}, 0);
    for (size_t i = 0; i < fibers.size(); ++i) {
        const FiberSite& f = fibers[i];
        const int64_t y0 = static_cast<int64_t>(std::floor(f.cy - f.radius));
        const int64_t y1 = static_cast<int64_t>(std::ceil(f.cy + f.radius));
        const int64_t x0 = static_cast<int64_t>(std::floor(f.cx - f.radius));
        const int64_t x1 = static_cast<int64_t>(std::ceil(f.cx + f.radius));
        for (int64_t y = y0; y <= y1; ++y)
            for (int64_t x = x0; x <= x1; ++x) {
                const double dx = static_cast<double>(x) - f.cx;
                const double dy = static_cast<double>(y) - f.cy;
                if (dx * dx + dy * dy <= f.radius * f.radius) {
                    slice_mask(y, x) = 1;
                    slice_labels(y, x) = static_cast<int32_t>(i) + 1;
                }
            }
    }

    Phantom out;
    out.fibers = fibers;
    out.defect_slices = cfg.defect_slices;
    out.volume = FloatArray({cfg.depth, n, n});
    out.gold_mask = MaskArray({cfg.depth, n, n});
    out.gold_labels = LabelArray({cfg.depth, n, n});

    std::normal_distribution<float> noise(0.0f, cfg.noise_sigma);
    const int64_t plane = n * n;
    for (int64_t z = 0; z < cfg.depth; ++z) {
        const bool defect = std::find(cfg.defect_slices.begin(), cfg.defect_slices.end(), z) !=
                            cfg.defect_slices.end();
        for (int64_t i = 0; i < plane; ++i) {
            float v = defect ? cfg.defect_value
                             : (slice_mask[i] ? cfg.foreground : cfg.background);
            if (cfg.noise_sigma > 0.0f) v += noise(rng);
            out.volume[z * plane + i] = std::clamp(v, 0.0f, 1.0f);
            out.gold_mask[z * plane + i] = slice_mask[i];
            out.gold_labels[z * plane + i] = slice_labels[i];
        }
    }
    return out;
}

}  // namespace fiberseg
