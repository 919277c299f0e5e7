#include "fiberseg/predictor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>

#include "fiberseg/classic.hpp"

namespace fiberseg {

TileSpec default_tile_spec(int dims) {
    return dims == 2 ? TileSpec::square2d(288, 256) : TileSpec::cube3d(64, 32);
}

void PredictConfig::validate() const {
    if (!tile.tile.empty()) tile.validate();
    if (threshold < 0.0f || threshold > 1.0f)
        throw InvalidSpec("predict: threshold must be in [0, 1]");
    if (workers < 1) throw InvalidSpec("predict: workers must be >= 1");
}

namespace {

// append zeros at the high end of each axis
FloatArray pad_high(const FloatArray& f, const std::vector<int64_t>& extra) {
    std::vector<int64_t> shape = f.shape();
    bool any = false;
    for (size_t i = 0; i < shape.size(); ++i) {
        shape[i] += extra[i];
        any = any || extra[i] > 0;
    }
    if (!any) return f;
    FloatArray out(shape, 0.0f);
    if (f.rank() == 2) {
        for (int64_t r = 0; r < f.extent(0); ++r)
            std::copy_n(f.data() + r * f.extent(1), f.extent(1), out.data() + r * out.extent(1));
    } else {
        for (int64_t z = 0; z < f.extent(0); ++z)
            for (int64_t r = 0; r < f.extent(1); ++r)
                std::copy_n(f.data() + (z * f.extent(1) + r) * f.extent(2), f.extent(2),
                            out.data() + (z * out.extent(1) + r) * out.extent(2));
    }
    return out;
}

FloatArray crop_to(const FloatArray& f, const std::vector<int64_t>& shape) {
    if (f.shape() == shape) return f;
    FloatArray out(shape);
    if (f.rank() == 2) {
        for (int64_t r = 0; r < shape[0]; ++r)
            std::copy_n(f.data() + r * f.extent(1), shape[1], out.data() + r * shape[1]);
    } else {
        for (int64_t z = 0; z < shape[0]; ++z)
            for (int64_t r = 0; r < shape[1]; ++r)
                std::copy_n(f.data() + (z * f.extent(1) + r) * f.extent(2), shape[2],
                            out.data() + (z * shape[1] + r) * shape[2]);
    }
    return out;
}

// pad by margin, resolve geometry, run tiles, stitch, crop back
FloatArray predict_field(nn::Network& net, const FloatArray& field, const TileSpec& spec,
                         bool auto_pad) {
    const int64_t margin = spec.margin(0);
    FloatArray padded = pad_zero(field, margin);
    const std::vector<int64_t> deficit = padding_deficit(padded.shape(), spec);
    if (!auto_pad) {
        (void)tile_counts(padded.shape(), spec);  // throws with the fix hint
    }
    padded = pad_high(padded, deficit);

    TileSet tiles = tile_grid(padded, spec);
    const int rank = field.rank();
    for (Tile& t : tiles.tiles) {
        std::vector<int64_t> batched{1, 1};
        batched.insert(batched.end(), t.data.shape().begin(), t.data.shape().end());
        nn::Tensor in(batched);
        std::copy_n(t.data.data(), t.data.size(), in.data());
        nn::Tensor out = net.forward(in, false);
        FloatArray prob(t.data.shape());
        std::copy_n(out.data(), prob.size(), prob.data());
        t.data = std::move(prob);
    }

    std::vector<int64_t> out_shape(padded.shape());
    for (auto& e : out_shape) e -= 2 * margin;
    FloatArray stitched = stitch(tiles, spec, out_shape);
    (void)rank;
    return crop_to(stitched, field.shape());
}

}  // namespace

FloatArray predict_volume(nn::Network& net, int dims, const FloatArray& volume,
                          const PredictConfig& cfg, PredictTiming* timing) {
    if (volume.rank() != 3) throw ShapeMismatch("predict_volume: expected a (d, h, w) volume");
    cfg.validate();
    const TileSpec spec = cfg.tile.tile.empty() ? default_tile_spec(dims) : cfg.tile;
    if (spec.rank() != dims)
        throw InvalidSpec("predict_volume: tile spec rank does not match architecture dims");

    const auto t0 = std::chrono::steady_clock::now();
    const int64_t d = volume.extent(0), h = volume.extent(1), w = volume.extent(2);
    FloatArray out({d, h, w});

    if (dims == 2) {
        FloatArray slice({h, w});
        for (int64_t z = 0; z < d; ++z) {
            const auto s0 = std::chrono::steady_clock::now();
            std::copy_n(volume.data() + z * h * w, h * w, slice.data());
            FloatArray prob = predict_field(net, slice, spec, cfg.auto_pad);
            std::copy_n(prob.data(), h * w, out.data() + z * h * w);
            if (timing)
                timing->slice_seconds.push_back(
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - s0).count());
        }
    } else {
        FloatArray prob = predict_field(net, volume, spec, cfg.auto_pad);
        out = std::move(prob);
        if (timing)
            timing->slice_seconds.push_back(
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    if (timing)
        timing->total_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

Instances label_instances(const MaskArray& mask, double spacing_um) {
    if (mask.rank() != 2 && mask.rank() != 3)
        throw ShapeMismatch("label_instances: expected a 2D or 3D mask");
    Instances out;
    out.labels = connected_components(mask);
    const int32_t n = max_label(out.labels);
    if (n == 0) return out;

    struct Acc {
        int64_t voxels = 0;
        double sz = 0, sy = 0, sx = 0;
        int64_t z_min = INT64_MAX, z_max = INT64_MIN;
    };
    std::vector<Acc> acc(static_cast<size_t>(n));
    const bool is3d = mask.rank() == 3;
    const int64_t d = is3d ? mask.extent(0) : 1;
    const int64_t h = mask.extent(is3d ? 1 : 0), w = mask.extent(is3d ? 2 : 1);
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const int32_t lab = out.labels[(z * h + y) * w + x];
                if (lab == 0) continue;
                Acc& a = acc[static_cast<size_t>(lab - 1)];
                ++a.voxels;
                a.sz += static_cast<double>(z);
                a.sy += static_cast<double>(y);
                a.sx += static_cast<double>(x);
                a.z_min = std::min(a.z_min, z);
                a.z_max = std::max(a.z_max, z);
            }

    for (int32_t lab = 1; lab <= n; ++lab) {
        const Acc& a = acc[static_cast<size_t>(lab - 1)];
        const double nv = static_cast<double>(a.voxels);
        // mean cross-section area: voxel count over the z extent spanned
        const double area = nv / static_cast<double>(a.z_max - a.z_min + 1);
        out.stats.push_back({lab, a.voxels, is3d ? a.sz / nv : 0.0, a.sy / nv, a.sx / nv,
                             std::sqrt(area / 3.14159265358979323846) * spacing_um});
    }
    return out;
}

MaskArray category_map(const MaskArray& pred, const MaskArray& gold) {
    require_same_shape(pred.shape(), gold.shape(), "category_map");
    MaskArray out(pred.shape());
    for (int64_t i = 0; i < out.size(); ++i) {
        const bool p = pred[i] != 0, g = gold[i] != 0;
        out[i] = p ? (g ? kTruePos : kFalsePos) : (g ? kFalseNeg : kTrueNeg);
    }
    return out;
}

}  // namespace fiberseg
