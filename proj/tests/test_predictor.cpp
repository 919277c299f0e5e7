#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fiberseg/arch.hpp"
#include "fiberseg/classic.hpp"
#include "fiberseg/metrics.hpp"
#include "fiberseg/predictor.hpp"

using namespace fiberseg;

namespace {

// position-independent elementwise stubs exercise the tiling/stitch plumbing
class ConstantLayer : public nn::Layer {
public:
    explicit ConstantLayer(float value) : value_(value) {}
    std::string kind() const override { return "stub_const"; }
    nn::Tensor forward(const std::vector<const nn::Tensor*>& in, bool) override {
        return nn::Tensor(in[0]->shape(), value_);
    }
    std::vector<nn::Tensor> backward(const nn::Tensor&) override { return {nn::Tensor()}; }

private:
    float value_;
};

class AffineLayer : public nn::Layer {
public:
    AffineLayer(float scale, float offset) : scale_(scale), offset_(offset) {}
    std::string kind() const override { return "stub_affine"; }
    nn::Tensor forward(const std::vector<const nn::Tensor*>& in, bool) override {
        nn::Tensor out(in[0]->shape());
        for (int64_t i = 0; i < out.size(); ++i) out[i] = scale_ * (*in[0])[i] + offset_;
        return out;
    }
    std::vector<nn::Tensor> backward(const nn::Tensor&) override { return {nn::Tensor()}; }

private:
    float scale_, offset_;
};

FloatArray ramp_volume(int64_t d, int64_t h, int64_t w) {
    FloatArray v({d, h, w});
    for (int64_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>((i * 31) % 97) / 97.0f;
    return v;
}

MaskArray disk_mask(int64_t n, double cx, double cy, double r) {
    MaskArray m({n, n}, 0);
    for (int64_t y = 0; y < n; ++y)
        for (int64_t x = 0; x < n; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            if (dx * dx + dy * dy <= r * r) m(y, x) = 1;
        }
    return m;
}

}  // namespace

TEST_CASE("constant stub network yields a constant probability volume") {
    nn::Network net;
    net.add(std::make_unique<ConstantLayer>(0.9f), {nn::Network::kInput});
    PredictConfig cfg;
    cfg.tile = TileSpec::square2d(16, 8);
    FloatArray vol = ramp_volume(2, 40, 40);
    FloatArray prob = predict_volume(net, 2, vol, cfg);
    CHECK(prob.shape() == vol.shape());
    for (int64_t i = 0; i < prob.size(); ++i) CHECK(prob[i] == 0.9f);
}

TEST_CASE("tiled prediction of an elementwise net equals the direct map") {
    nn::Network net;
    net.add(std::make_unique<AffineLayer>(0.5f, 0.25f), {nn::Network::kInput});

    SUBCASE("2d slice-wise") {
        PredictConfig cfg;
        cfg.tile = TileSpec::square2d(16, 8);
        FloatArray vol = ramp_volume(3, 36, 52);
        FloatArray prob = predict_volume(net, 2, vol, cfg);
        for (int64_t i = 0; i < vol.size(); ++i) CHECK(prob[i] == 0.5f * vol[i] + 0.25f);
    }
    SUBCASE("3d chunked") {
        PredictConfig cfg;
        cfg.tile = TileSpec::cube3d(16, 8);
        FloatArray vol = ramp_volume(24, 24, 40);
        FloatArray prob = predict_volume(net, 3, vol, cfg);
        for (int64_t i = 0; i < vol.size(); ++i) CHECK(prob[i] == 0.5f * vol[i] + 0.25f);
    }
}

TEST_CASE("inference is bitwise deterministic for a real network") {
    nn::Network net = build(ArchSpec::unet2d(2, 4, 3));
    PredictConfig cfg;
    cfg.tile = TileSpec::square2d(16, 8);
    FloatArray vol = ramp_volume(1, 40, 40);
    FloatArray a = predict_volume(net, 2, vol, cfg);
    FloatArray b = predict_volume(net, 2, vol, cfg);
    CHECK(a.raw() == b.raw());
    for (int64_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] >= 0.0f);
        CHECK(a[i] <= 1.0f);
    }
}

TEST_CASE("geometry rules: auto-pad resolves, strict mode throws") {
    nn::Network net;
    net.add(std::make_unique<ConstantLayer>(0.5f), {nn::Network::kInput});
    // 30 + 2*4 = 38; (38 - 16) % 8 != 0
    FloatArray vol = ramp_volume(1, 30, 30);
    PredictConfig cfg;
    cfg.tile = TileSpec::square2d(16, 8);

    cfg.auto_pad = false;
    CHECK_THROWS_AS(predict_volume(net, 2, vol, cfg), GeometryMismatch);
    cfg.auto_pad = true;
    FloatArray prob = predict_volume(net, 2, vol, cfg);
    CHECK(prob.shape() == vol.shape());
}

TEST_CASE("prediction timing is recorded per slice") {
    nn::Network net;
    net.add(std::make_unique<ConstantLayer>(0.5f), {nn::Network::kInput});
    FloatArray vol = ramp_volume(4, 24, 24);
    PredictConfig cfg;
    cfg.tile = TileSpec::square2d(16, 8);
    PredictTiming timing;
    predict_volume(net, 2, vol, cfg, &timing);
    CHECK(timing.slice_seconds.size() == 4);
    CHECK(timing.total_seconds >= 0.0);
}

TEST_CASE("config validation") {
    nn::Network net;
    net.add(std::make_unique<ConstantLayer>(0.5f), {nn::Network::kInput});
    FloatArray vol = ramp_volume(1, 24, 24);
    PredictConfig cfg;
    cfg.threshold = 1.5f;
    CHECK_THROWS_AS(predict_volume(net, 2, vol, cfg), InvalidSpec);
    cfg = PredictConfig{};
    cfg.tile = TileSpec::cube3d(16, 8);  // rank mismatch with a 2D net
    CHECK_THROWS_AS(predict_volume(net, 2, vol, cfg), InvalidSpec);
    CHECK(default_tile_spec(2).tile == std::vector<int64_t>{288, 288});
    CHECK(default_tile_spec(3).stride == std::vector<int64_t>{32, 32, 32});
}

TEST_CASE("label_instances on a single 13-px-diameter disk") {
    MaskArray m = disk_mask(32, 15.5, 15.5, 6.5);
    Instances inst = label_instances(m, 1.0);
    REQUIRE(inst.stats.size() == 1);
    CHECK(inst.stats[0].label == 1);
    CHECK(inst.stats[0].equiv_radius == doctest::Approx(6.5).epsilon(0.05));
    CHECK(inst.stats[0].cx == doctest::Approx(15.5).epsilon(0.01));
    CHECK(inst.stats[0].cy == doctest::Approx(15.5).epsilon(0.01));
    CHECK(inst.stats[0].voxels == [&] {
        int64_t c = 0;
        for (int64_t i = 0; i < m.size(); ++i) c += m[i];
        return c;
    }());
}

TEST_CASE("label_instances handles empty and multi-instance masks") {
    SUBCASE("empty mask") {
        MaskArray m({16, 16}, 0);
        Instances inst = label_instances(m);
        CHECK(inst.stats.empty());
        CHECK(max_label(inst.labels) == 0);
    }
    SUBCASE("two disjoint disks with known centroids") {
        MaskArray m({40, 64}, 0);
        MaskArray a = disk_mask(40, 10.0, 12.0, 5.0);
        for (int64_t y = 0; y < 40; ++y)
            for (int64_t x = 0; x < 40; ++x)
                if (a(y, x)) m(y, x) = 1;
        MaskArray b = disk_mask(40, 30.0, 28.0, 4.0);
        for (int64_t y = 0; y < 40; ++y)
            for (int64_t x = 0; x < 40; ++x)
                if (b(y, x)) m(y, x + 24) = 1;
        Instances inst = label_instances(m);
        REQUIRE(inst.stats.size() == 2);
        CHECK(inst.stats[0].cx == doctest::Approx(10.0).epsilon(0.01));
        CHECK(inst.stats[0].cy == doctest::Approx(12.0).epsilon(0.01));
        CHECK(inst.stats[1].cx == doctest::Approx(30.0 + 24.0).epsilon(0.01));
        CHECK(inst.stats[1].cy == doctest::Approx(28.0).epsilon(0.01));
    }
    SUBCASE("labels cover exactly the mask-positive voxels") {
        MaskArray m = disk_mask(24, 8.0, 9.0, 4.0);
        Instances inst = label_instances(m);
        for (int64_t i = 0; i < m.size(); ++i) CHECK((inst.labels[i] != 0) == (m[i] != 0));
    }
}

TEST_CASE("label_instances on a 3D cylinder recovers the cross-section radius") {
    const int64_t d = 10, n = 24;
    MaskArray vol({d, n, n}, 0);
    MaskArray slice = disk_mask(n, 11.5, 11.5, 5.0);
    for (int64_t z = 0; z < d; ++z)
        for (int64_t i = 0; i < n * n; ++i) vol[z * n * n + i] = slice[i];
    Instances inst = label_instances(vol, 2.0);  // 2 um spacing
    REQUIRE(inst.stats.size() == 1);
    CHECK(inst.stats[0].cz == doctest::Approx(4.5).epsilon(0.01));
    CHECK(inst.stats[0].equiv_radius == doctest::Approx(2.0 * 5.0).epsilon(0.05));
}

TEST_CASE("category map matches confusion counts") {
    MaskArray pred({8, 8}), gold({8, 8});
    for (int64_t i = 0; i < 64; ++i) {
        pred[i] = (i * 7) % 3 == 0 ? 1 : 0;
        gold[i] = (i * 5) % 4 == 0 ? 1 : 0;
    }
    MaskArray cat = category_map(pred, gold);
    ConfusionCounts c = confusion(pred, gold);
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (int64_t i = 0; i < 64; ++i) {
        tp += cat[i] == kTruePos;
        fp += cat[i] == kFalsePos;
        fn += cat[i] == kFalseNeg;
        tn += cat[i] == kTrueNeg;
    }
    CHECK(tp == c.tp);
    CHECK(fp == c.fp);
    CHECK(fn == c.fn);
    CHECK(tn == c.tn);
    CHECK_THROWS_AS(category_map(pred, MaskArray({8, 9})), ShapeMismatch);
}
