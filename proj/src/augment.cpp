#include "fiberseg/augment.hpp"

#include <cmath>

namespace fiberseg {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kSnap = 1e-9;  // grid-point snapping tolerance
}  // namespace

void AugmentConfig::validate() const {
    if (rotation_range < 0.0f || shear_range < 0.0f)
        throw InvalidSpec("augment: rotation/shear ranges must be >= 0");
    if (width_shift < 0.0f || width_shift >= 1.0f || height_shift < 0.0f || height_shift >= 1.0f)
        throw InvalidSpec("augment: shifts must be in [0, 1)");
    if (zoom_range < 0.0f || zoom_range >= 1.0f)
        throw InvalidSpec("augment: zoom_range must be in [0, 1)");
}

Transform Transform::identity(int dims) {
    Transform t;
    t.dims = dims;
    for (int i = 0; i <= dims; ++i) t.at(i, i) = 1.0;
    return t;
}

bool Transform::is_identity(double tol) const {
    const Transform id = identity(dims);
    for (int r = 0; r <= dims; ++r)
        for (int c = 0; c <= dims; ++c)
            if (std::abs(at(r, c) - id.at(r, c)) > tol) return false;
    return true;
}

Transform compose(const Transform& a, const Transform& b) {
    if (a.dims != b.dims) throw ShapeMismatch("compose: transform dims differ");
    Transform out;
    out.dims = a.dims;
    const int n = a.dims + 1;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            double s = 0.0;
            for (int k = 0; k < n; ++k) s += a.at(r, k) * b.at(k, c);
            out.at(r, c) = s;
        }
    return out;
}

Transform sample_transform(const AugmentConfig& cfg, int dims, std::mt19937_64& rng) {
    cfg.validate();
    if (dims != 2 && dims != 3) throw InvalidSpec("sample_transform: dims must be 2 or 3");

    auto draw = [&](double range) {
        return std::uniform_real_distribution<double>(-range, range)(rng);
    };
    const double theta = draw(cfg.rotation_range) * kPi / 180.0;
    const double ty = draw(cfg.height_shift);
    const double tx = draw(cfg.width_shift);
    const double shear = draw(cfg.shear_range) * kPi / 180.0;
    const double zx = 1.0 + draw(cfg.zoom_range);
    const double zy = 1.0 + draw(cfg.zoom_range);
    std::bernoulli_distribution coin(0.5);
    const bool fh = cfg.horizontal_flip && coin(rng);
    const bool fv = cfg.vertical_flip && coin(rng);
    const bool fz = dims == 3 && cfg.z_flip && coin(rng);

    // linear part: flip * zoom * shear * rotation
    const double c = std::cos(theta), s = std::sin(theta);
    const double shs = std::sin(shear), shc = std::cos(shear);
    // shear * rotation
    double a00 = c - shs * s, a01 = -s - shs * c;
    double a10 = shc * s, a11 = shc * c;
    // zoom
    a00 *= zx;
    a01 *= zx;
    a10 *= zy;
    a11 *= zy;
    // flips
    if (fh) {
        a00 = -a00;
        a01 = -a01;
    }
    if (fv) {
        a10 = -a10;
        a11 = -a11;
    }

    Transform t = Transform::identity(dims);
    t.at(0, 0) = a00;
    t.at(0, 1) = a01;
    t.at(1, 0) = a10;
    t.at(1, 1) = a11;
    t.at(0, dims) = tx;  // fractions of extent
    t.at(1, dims) = ty;
    if (dims == 3) t.at(2, 2) = fz ? -1.0 : 1.0;
    return t;
}

namespace {

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < kSnap ? r : v;
}

FloatArray warp2d(const Transform& t, const FloatArray& f, bool nearest) {
    const int64_t h = f.extent(0), w = f.extent(1);
    const double cx = 0.5 * static_cast<double>(w - 1);
    const double cy = 0.5 * static_cast<double>(h - 1);
    const double a = t.at(0, 0), b = t.at(0, 1), c = t.at(1, 0), d = t.at(1, 1);
    const double det = a * d - b * c;
    if (std::abs(det) < 1e-12) throw InvalidSpec("warp: singular transform");
    const double ia = d / det, ib = -b / det, ic = -c / det, id = a / det;
    const double tx = t.at(0, 2) * static_cast<double>(w);
    const double ty = t.at(1, 2) * static_cast<double>(h);

    FloatArray out({h, w}, 0.0f);
    auto px = [&](int64_t r, int64_t cc) -> double {
        if (r < 0 || r >= h || cc < 0 || cc >= w) return 0.0;
        return f(r, cc);
    };
    for (int64_t r = 0; r < h; ++r)
        for (int64_t cc = 0; cc < w; ++cc) {
            const double qx = static_cast<double>(cc) - cx - tx;
            const double qy = static_cast<double>(r) - cy - ty;
            const double sx = snap(ia * qx + ib * qy + cx);
            const double sy = snap(ic * qx + id * qy + cy);
            if (nearest) {
                const int64_t xi = static_cast<int64_t>(std::llround(sx));
                const int64_t yi = static_cast<int64_t>(std::llround(sy));
                out(r, cc) = static_cast<float>(px(yi, xi));
            } else {
                const double x0 = std::floor(sx), y0 = std::floor(sy);
                const double fx = sx - x0, fy = sy - y0;
                const int64_t xi = static_cast<int64_t>(x0), yi = static_cast<int64_t>(y0);
                double v = 0.0;
                if (fx != 0.0 || fy != 0.0) {
                    v = (1 - fx) * (1 - fy) * px(yi, xi) + fx * (1 - fy) * px(yi, xi + 1) +
                        (1 - fx) * fy * px(yi + 1, xi) + fx * fy * px(yi + 1, xi + 1);
                } else {
                    v = px(yi, xi);  // snapped: exact index lookup
                }
                out(r, cc) = static_cast<float>(v);
            }
        }
    return out;
}

FloatArray warp3d(const Transform& t, const FloatArray& f, bool nearest) {
    const int64_t depth = f.extent(0), h = f.extent(1), w = f.extent(2);
    // in-plane transform applied per slice; z axis only carries a reflection
    Transform plane = Transform::identity(2);
    plane.at(0, 0) = t.at(0, 0);
    plane.at(0, 1) = t.at(0, 1);
    plane.at(1, 0) = t.at(1, 0);
    plane.at(1, 1) = t.at(1, 1);
    plane.at(0, 2) = t.at(0, 3);
    plane.at(1, 2) = t.at(1, 3);
    const bool zflip = t.at(2, 2) < 0.0;

    FloatArray out({depth, h, w});
    FloatArray slice({h, w});
    for (int64_t z = 0; z < depth; ++z) {
        const int64_t sz = zflip ? depth - 1 - z : z;
        std::copy_n(f.data() + sz * h * w, h * w, slice.data());
        FloatArray ws = warp2d(plane, slice, nearest);
        std::copy_n(ws.data(), h * w, out.data() + z * h * w);
    }
    return out;
}

}  // namespace

FloatArray warp(const Transform& t, const FloatArray& field, bool nearest) {
    if (t.dims == 2) {
        if (field.rank() != 2) throw ShapeMismatch("warp: 2D transform needs a rank-2 field");
        return warp2d(t, field, nearest);
    }
    if (field.rank() != 3) throw ShapeMismatch("warp: 3D transform needs a rank-3 field");
    return warp3d(t, field, nearest);
}

std::pair<FloatArray, MaskArray> apply(const Transform& t, const FloatArray& image,
                                       const MaskArray& label) {
    if (image.shape() != label.shape()) throw ShapeMismatch("apply: image/label shape mismatch");
    FloatArray wi = warp(t, image, false);

    FloatArray lf(label.shape());
    for (int64_t i = 0; i < lf.size(); ++i) lf[i] = label[i] ? 1.0f : 0.0f;
    FloatArray wl = warp(t, lf, true);
    MaskArray out(label.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = wl[i] != 0.0f ? 1 : 0;
    return {std::move(wi), std::move(out)};
}

nn::AugmentFn make_augment_fn(const AugmentConfig& cfg) {
    cfg.validate();
    return [cfg](const nn::Tensor& x, const nn::Tensor& y, uint64_t item_seed) {
        std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + item_seed);
        const int dims = x.rank() - 1;  // [C, spatial...]
        const Transform t = sample_transform(cfg, dims, rng);

        std::vector<int64_t> spatial(x.shape().begin() + 1, x.shape().end());
        const int64_t plane = std::accumulate(spatial.begin(), spatial.end(), int64_t{1},
                                              std::multiplies<int64_t>());
        auto warp_channels = [&](const nn::Tensor& src, bool nearest) {
            nn::Tensor dst(src.shape());
            FloatArray ch(spatial);
            for (int64_t c = 0; c < src.extent(0); ++c) {
                std::copy_n(src.data() + c * plane, plane, ch.data());
                FloatArray wc = warp(t, ch, nearest);
                std::copy_n(wc.data(), plane, dst.data() + c * plane);
            }
            return dst;
        };
        return std::make_pair(warp_channels(x, false), warp_channels(y, true));
    };
}

}  // namespace fiberseg
