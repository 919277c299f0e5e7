#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fiberseg/augment.hpp"

using namespace fiberseg;

namespace {

AugmentConfig off_config() {
    AugmentConfig cfg;
    cfg.rotation_range = 0.0f;
    cfg.horizontal_flip = false;
    cfg.vertical_flip = false;
    cfg.width_shift = 0.0f;
    cfg.height_shift = 0.0f;
    cfg.zoom_range = 0.0f;
    cfg.shear_range = 0.0f;
    cfg.z_flip = false;
    return cfg;
}

Transform rot90_ccw() {
    // (x, y) -> (-y, x)
    Transform t = Transform::identity(2);
    t.at(0, 0) = 0.0;
    t.at(0, 1) = -1.0;
    t.at(1, 0) = 1.0;
    t.at(1, 1) = 0.0;
    return t;
}

Transform flip_x() {
    Transform t = Transform::identity(2);
    t.at(0, 0) = -1.0;
    return t;
}

Transform flip_y() {
    Transform t = Transform::identity(2);
    t.at(1, 1) = -1.0;
    return t;
}

FloatArray ramp(int64_t h, int64_t w) {
    FloatArray f({h, w});
    for (int64_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(i) * 0.01f;
    return f;
}

FloatArray disk_image(int64_t n, double r) {
    FloatArray f({n, n}, 0.0f);
    const double c = 0.5 * static_cast<double>(n - 1);
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            const double dx = static_cast<double>(x) - c, dy = static_cast<double>(y) - c;
            if (dx * dx + dy * dy <= r * r) f(y, x) = 1.0f;
        }
    return f;
}

}  // namespace

TEST_CASE("all ranges zero and flips off give the identity transform") {
    std::mt19937_64 rng(1);
    Transform t = sample_transform(off_config(), 2, rng);
    CHECK(t.is_identity());
    Transform t3 = sample_transform(off_config(), 3, rng);
    CHECK(t3.is_identity());
}

TEST_CASE("identity transform leaves image and label unchanged") {
    FloatArray img = ramp(7, 9);
    MaskArray lab({7, 9}, 0);
    lab(2, 3) = 1;
    lab(5, 8) = 1;
    auto [wi, wl] = apply(Transform::identity(2), img, lab);
    CHECK(wi.raw() == img.raw());
    CHECK(wl.raw() == lab.raw());
}

TEST_CASE("horizontal flip only yields an x-axis reflection matrix") {
    AugmentConfig cfg = off_config();
    cfg.horizontal_flip = true;
    bool found = false;
    for (uint64_t seed = 0; seed < 32 && !found; ++seed) {
        std::mt19937_64 rng(seed);
        Transform t = sample_transform(cfg, 2, rng);
        if (t.at(0, 0) == -1.0) {
            found = true;
            CHECK(t.at(0, 1) == 0.0);
            CHECK(t.at(1, 0) == 0.0);
            CHECK(t.at(1, 1) == 1.0);
            CHECK(t.at(0, 2) == 0.0);
            CHECK(t.at(1, 2) == 0.0);
        }
    }
    CHECK(found);
}

TEST_CASE("rotation_range 10 samples angles covering [-10, 10] degrees") {
    AugmentConfig cfg = off_config();
    cfg.rotation_range = 10.0f;
    std::mt19937_64 rng(7);
    double lo = 1e9, hi = -1e9, sum = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        Transform t = sample_transform(cfg, 2, rng);
        const double deg = std::atan2(t.at(1, 0), t.at(0, 0)) * 180.0 / 3.14159265358979323846;
        CHECK(deg >= -10.0 - 1e-9);
        CHECK(deg <= 10.0 + 1e-9);
        lo = std::min(lo, deg);
        hi = std::max(hi, deg);
        sum += deg;
    }
    CHECK(lo < -9.5);
    CHECK(hi > 9.5);
    CHECK(std::abs(sum / n) < 0.3);
}

TEST_CASE("flips are exact involutions") {
    FloatArray img = ramp(6, 8);
    for (const Transform& t : {flip_x(), flip_y()}) {
        FloatArray once = warp(t, img);
        CHECK(once.raw() != img.raw());
        CHECK(warp(t, once).raw() == img.raw());
    }
}

TEST_CASE("90-degree rotation matches the index-permutation oracle exactly") {
    const int64_t n = 9;
    FloatArray img = ramp(n, n);
    img(0, 0) = 42.0f;  // asymmetric corner marker
    FloatArray out = warp(rot90_ccw(), img);
    // x' = -y, y' = x about the centre => out(r, c) = in(n-1-c, r)
    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = 0; c < n; ++c) CHECK(out(r, c) == img(n - 1 - c, r));
    CHECK(out(0, n - 1) == 42.0f);  // (x,y)=(-c,-c) maps to (c,-c)
}

TEST_CASE("flips and quarter turns compose per the dihedral group") {
    FloatArray img = ramp(8, 8);
    // flip_x then flip_y is a half turn
    Transform half = compose(flip_y(), flip_x());
    Transform quarter2 = compose(rot90_ccw(), rot90_ccw());
    CHECK(warp(half, img).raw() == warp(quarter2, img).raw());
    // four quarter turns are the identity
    FloatArray four = img;
    for (int i = 0; i < 4; ++i) four = warp(rot90_ccw(), four);
    CHECK(four.raw() == img.raw());
}

TEST_CASE("labels remain binary under random transforms") {
    AugmentConfig cfg;  // defaults: everything on
    cfg.seed = 3;
    FloatArray img = disk_image(32, 10.0);
    MaskArray lab({32, 32});
    for (int64_t i = 0; i < lab.size(); ++i) lab[i] = img[i] > 0.5f ? 1 : 0;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        Transform t = sample_transform(cfg, 2, rng);
        auto [wi, wl] = apply(t, img, lab);
        for (int64_t j = 0; j < wl.size(); ++j) CHECK((wl[j] == 0 || wl[j] == 1));
    }
}

TEST_CASE("image and label stay consistent under small rotations") {
    const int64_t n = 64;
    FloatArray img = disk_image(n, 20.0);
    MaskArray lab({n, n});
    for (int64_t i = 0; i < lab.size(); ++i) lab[i] = img[i] > 0.5f ? 1 : 0;

    for (double deg : {-15.0, -7.0, 4.0, 15.0}) {
        const double th = deg * 3.14159265358979323846 / 180.0;
        Transform t = Transform::identity(2);
        t.at(0, 0) = std::cos(th);
        t.at(0, 1) = -std::sin(th);
        t.at(1, 0) = std::sin(th);
        t.at(1, 1) = std::cos(th);
        auto [wi, wl] = apply(t, img, lab);
        int64_t inter = 0, uni = 0;
        for (int64_t i = 0; i < wl.size(); ++i) {
            const bool a = wi[i] > 0.5f, b = wl[i] != 0;
            inter += a && b;
            uni += a || b;
        }
        CHECK(static_cast<double>(inter) / static_cast<double>(uni) >= 0.98);
    }
}

TEST_CASE("equal seeds give identical transform streams") {
    AugmentConfig cfg;
    std::mt19937_64 r1(99), r2(99), r3(100);
    bool any_diff = false;
    for (int i = 0; i < 100; ++i) {
        Transform a = sample_transform(cfg, 2, r1);
        Transform b = sample_transform(cfg, 2, r2);
        Transform c = sample_transform(cfg, 2, r3);
        CHECK(a.m == b.m);
        if (a.m != c.m) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("augment adapter is deterministic per item seed") {
    AugmentConfig cfg;
    cfg.seed = 5;
    auto fn = make_augment_fn(cfg);
    nn::Tensor x({1, 16, 16});
    nn::Tensor y({1, 16, 16});
    for (int64_t i = 0; i < x.size(); ++i) {
        x[i] = static_cast<float>((i * 37) % 101) / 101.0f;
        y[i] = x[i] > 0.5f ? 1.0f : 0.0f;
    }
    auto [x1, y1] = fn(x, y, 42);
    auto [x2, y2] = fn(x, y, 42);
    auto [x3, y3] = fn(x, y, 43);
    CHECK(x1.raw() == x2.raw());
    CHECK(y1.raw() == y2.raw());
    CHECK(x1.raw() != x3.raw());
    for (int64_t i = 0; i < y1.size(); ++i) CHECK((y1[i] == 0.0f || y1[i] == 1.0f));
}

TEST_CASE("3D transforms act in-plane uniformly across z, z-flip reverses slices") {
    const int64_t d = 4, n = 12;
    FloatArray vol({d, n, n});
    for (int64_t i = 0; i < vol.size(); ++i) vol[i] = static_cast<float>((i * 13) % 7);

    SUBCASE("in-plane rotation equals slice-wise 2D warp") {
        Transform t3 = Transform::identity(3);
        const double th = 0.3;
        t3.at(0, 0) = std::cos(th);
        t3.at(0, 1) = -std::sin(th);
        t3.at(1, 0) = std::sin(th);
        t3.at(1, 1) = std::cos(th);
        FloatArray out = warp(t3, vol);
        Transform t2 = Transform::identity(2);
        t2.at(0, 0) = t3.at(0, 0);
        t2.at(0, 1) = t3.at(0, 1);
        t2.at(1, 0) = t3.at(1, 0);
        t2.at(1, 1) = t3.at(1, 1);
        for (int64_t z = 0; z < d; ++z) {
            FloatArray slice({n, n});
            std::copy_n(vol.data() + z * n * n, n * n, slice.data());
            FloatArray ws = warp(t2, slice);
            for (int64_t i = 0; i < n * n; ++i) CHECK(out[z * n * n + i] == ws[i]);
        }
    }
    SUBCASE("z reflection") {
        Transform t3 = Transform::identity(3);
        t3.at(2, 2) = -1.0;
        FloatArray out = warp(t3, vol);
        for (int64_t z = 0; z < d; ++z)
            for (int64_t i = 0; i < n * n; ++i)
                CHECK(out[z * n * n + i] == vol[(d - 1 - z) * n * n + i]);
    }
}

TEST_CASE("config validation and shape errors") {
    AugmentConfig bad;
    bad.zoom_range = 1.5f;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
    bad = AugmentConfig{};
    bad.width_shift = 1.0f;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
    bad = AugmentConfig{};
    bad.rotation_range = -1.0f;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);

    FloatArray img({4, 4});
    MaskArray lab({4, 5});
    CHECK_THROWS_AS(apply(Transform::identity(2), img, lab), ShapeMismatch);
    CHECK_THROWS_AS(warp(Transform::identity(3), img), ShapeMismatch);
}
