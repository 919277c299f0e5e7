#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "fiberseg/arch.hpp"

using namespace fiberseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("fseg_arch_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

nn::Tensor random_input(const std::vector<int64_t>& shape, uint32_t seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    nn::Tensor t(shape);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
    return t;
}

int count_kind(nn::Network& net, const std::string& kind) {
    int n = 0;
    for (size_t i = 0; i < net.node_count(); ++i)
        if (net.layer(i).kind() == kind) ++n;
    return n;
}

// desk-scale variants of each family, small enough for 1-cpu test runs
ArchSpec small_spec(const std::string& id) {
    if (id == "unet2d") return ArchSpec::unet2d(2, 4, 7);
    if (id == "unet3d") return ArchSpec::unet3d(2, 4, 7);
    if (id == "tiramisu2d") return ArchSpec::tiramisu2d(2, 4, 2, 7);
    return ArchSpec::tiramisu3d(2, 4, 2, 7);
}

}  // namespace

TEST_CASE("all four families preserve spatial shape with one sigmoid channel") {
    for (const std::string id : {"unet2d", "unet3d", "tiramisu2d", "tiramisu3d"}) {
        CAPTURE(id);
        ArchSpec spec = small_spec(id);
        nn::Network net = build(spec);
        std::vector<int64_t> in_shape =
            spec.dims == 2 ? std::vector<int64_t>{1, 1, 16, 16} : std::vector<int64_t>{1, 1, 8, 8, 8};
        nn::Tensor x = random_input(in_shape, 11);
        nn::Tensor y = net.forward(x, false);
        CHECK(y.shape() == in_shape);
        for (int64_t i = 0; i < y.size(); ++i) {
            CHECK(y[i] > 0.0f);
            CHECK(y[i] < 1.0f);
        }
    }
}

TEST_CASE("2d unet has dropout at the bottleneck and after the last decoder block only") {
    ArchSpec spec = ArchSpec::unet2d(3, 4, 0);
    nn::Network net = build(spec);
    CHECK(count_kind(net, "dropout") == 2);

    // first dropout follows the bottleneck (pool count before it equals depth);
    // second is the penultimate node before the 1x1 conv + sigmoid head
    int pools_before_first_dropout = 0;
    bool seen_dropout = false;
    for (size_t i = 0; i < net.node_count(); ++i) {
        const std::string k = net.layer(i).kind();
        if (k == "dropout" && !seen_dropout) {
            seen_dropout = true;
            CHECK(pools_before_first_dropout == spec.depth);
        }
        if (k == "maxpool" && !seen_dropout) ++pools_before_first_dropout;
    }
    CHECK(net.layer(net.node_count() - 3).kind() == "dropout");
    CHECK(net.layer(net.node_count() - 2).kind() == "conv2d");
    CHECK(net.layer(net.node_count() - 1).kind() == "sigmoid");
}

TEST_CASE("3d unet has no dropout by default") {
    nn::Network net = build(ArchSpec::unet3d(2, 4, 0));
    CHECK(count_kind(net, "dropout") == 0);
}

TEST_CASE("tiramisu attaches dropout after every internal conv") {
    ArchSpec spec = ArchSpec::tiramisu2d(2, 4, 2, 0);
    nn::Network net = build(spec);
    // dense layers: (depth*2+1 blocks) * layers_per_block; transitions down: depth
    const int expected = (2 * spec.depth + 1) * spec.layers_per_block + spec.depth;
    CHECK(count_kind(net, "dropout") == expected);
    // head is conv1x1 -> sigmoid with no trailing dropout
    CHECK(net.layer(net.node_count() - 2).kind() == "conv2d");
    CHECK(net.layer(net.node_count() - 1).kind() == "sigmoid");
}

TEST_CASE("parameter count matches a hand count for depth-1 base-4 2d unet") {
    // encoder double conv (1->4):   1*4*9+4 + bn(8) + 4*4*9+4 + bn(8)   = 204
    // bottleneck double conv (4->8): 4*8*9+8 + bn(16) + 8*8*9+8 + bn(16) = 912
    // upconv (8->4):                 8*4*2*2 + 4                         = 132
    // decoder double conv (8->4):    8*4*9+4 + bn(8) + 4*4*9+4 + bn(8)  = 456
    // head conv1 (4->1):             4+1                                 = 5
    nn::Network net = build(ArchSpec::unet2d(1, 4, 0));
    CHECK(net.parameter_count() == 1709);
}

TEST_CASE("same seed builds identical initial weights, different seed differs") {
    nn::Network a = build(ArchSpec::unet2d(2, 4, 13));
    nn::Network b = build(ArchSpec::unet2d(2, 4, 13));
    nn::Network c = build(ArchSpec::unet2d(2, 4, 14));
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    REQUIRE(pa.size() == pb.size());
    bool all_equal_ab = true, all_equal_ac = true;
    for (size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->raw() != pb[i]->raw()) all_equal_ab = false;
        if (pa[i]->raw() != pc[i]->raw()) all_equal_ac = false;
    }
    CHECK(all_equal_ab);
    CHECK_FALSE(all_equal_ac);
}

TEST_CASE("weight save/load round trip reproduces predictions bitwise") {
    TempDir tmp;
    for (const std::string id : {"unet2d", "unet3d", "tiramisu2d", "tiramisu3d"}) {
        CAPTURE(id);
        ArchSpec spec = small_spec(id);
        nn::Network net = build(spec);
        std::vector<int64_t> in_shape =
            spec.dims == 2 ? std::vector<int64_t>{1, 1, 16, 16} : std::vector<int64_t>{1, 1, 8, 8, 8};
        nn::Tensor x = random_input(in_shape, 21);
        nn::Tensor before = net.forward(x, false);

        const fs::path file = tmp.path / (id + ".fsegnet");
        save_weights(net, spec, file);
        auto [loaded, lspec] = load_weights(file);
        CHECK(lspec.id() == id);
        nn::Tensor after = loaded.forward(x, false);
        CHECK(before.raw() == after.raw());
    }
}

TEST_CASE("load_weights_as rejects a different architecture") {
    TempDir tmp;
    ArchSpec spec = small_spec("unet2d");
    nn::Network net = build(spec);
    const fs::path file = tmp.path / "w.fsegnet";
    save_weights(net, spec, file);
    CHECK_THROWS_AS(load_weights_as(file, "tiramisu2d"), ArchMismatch);
    auto [ok, okspec] = load_weights_as(file, "unet2d");
    CHECK(okspec.id() == "unet2d");
}

TEST_CASE("corrupt weight files are rejected") {
    TempDir tmp;
    ArchSpec spec = ArchSpec::unet2d(1, 4, 0);
    nn::Network net = build(spec);
    const fs::path file = tmp.path / "w.fsegnet";
    save_weights(net, spec, file);

    SUBCASE("bad magic") {
        std::fstream f(file, std::ios::binary | std::ios::in | std::ios::out);
        f.write("NOTMAGIC", 8);
        f.close();
        CHECK_THROWS_AS(load_weights(file), CorruptFile);
    }
    SUBCASE("truncated blob section") {
        const auto size = fs::file_size(file);
        fs::resize_file(file, size - 16);
        CHECK_THROWS_AS(load_weights(file), CorruptFile);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_weights(tmp.path / "nope.fsegnet"), IoError);
    }
}

TEST_CASE("spec ids and validation") {
    CHECK(ArchSpec::unet2d().id() == "unet2d");
    CHECK(ArchSpec::unet3d().id() == "unet3d");
    CHECK(ArchSpec::tiramisu2d().id() == "tiramisu2d");
    CHECK(ArchSpec::tiramisu3d().id() == "tiramisu3d");
    CHECK(ArchSpec::from_id("unet3d").base_channels == 32);
    CHECK(ArchSpec::from_id("tiramisu2d").depth == 5);
    CHECK_THROWS_AS(ArchSpec::from_id("resnet"), InvalidSpec);

    ArchSpec bad = ArchSpec::unet2d();
    bad.dims = 4;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
    bad = ArchSpec::unet2d();
    bad.depth = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
    bad = ArchSpec::unet2d();
    bad.dropout_rate = 1.5f;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
}

TEST_CASE("default dropout rates per family") {
    CHECK(ArchSpec::unet2d().effective_dropout() == 0.5f);
    CHECK(ArchSpec::unet3d().effective_dropout() == 0.0f);
    CHECK(ArchSpec::tiramisu2d().effective_dropout() == 0.2f);
    ArchSpec s = ArchSpec::unet3d();
    s.dropout_rate = 0.25f;
    CHECK(s.effective_dropout() == 0.25f);
}
