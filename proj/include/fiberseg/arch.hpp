#pragma once

#include <filesystem>
#include <string>
#include <utility>

#include "fiberseg/nn.hpp"

namespace fiberseg {

struct ArchSpec {
    enum class Family { UNet, Tiramisu };

    Family family = Family::UNet;
    int dims = 2;
    int depth = 4;                 // down/up levels
    int64_t base_channels = 64;    // unet: first-level channels (doubled per level)
    int64_t first_conv_channels = 48;  // tiramisu stem
    int64_t growth_rate = 16;      // tiramisu
    int layers_per_block = 4;      // tiramisu dense-block depth
    float dropout_rate = -1.0f;    // -1: family defaults (0.5 2D unet, 0 3D unet, 0.2 tiramisu)
    bool batch_norm = true;
    uint64_t seed = 0;

    std::string id() const;  // "unet2d", "unet3d", "tiramisu2d", "tiramisu3d"
    float effective_dropout() const;
    void validate() const;

    static ArchSpec unet2d(int depth = 4, int64_t base = 64, uint64_t seed = 0);
    static ArchSpec unet3d(int depth = 4, int64_t base = 32, uint64_t seed = 0);
    static ArchSpec tiramisu2d(int depth = 5, int64_t growth = 16, int layers = 4,
                               uint64_t seed = 0);
    static ArchSpec tiramisu3d(int depth = 3, int64_t growth = 16, int layers = 4,
                               uint64_t seed = 0);
    static ArchSpec from_id(const std::string& id, uint64_t seed = 0);
};

// Single-channel input -> same-shaped single-channel sigmoid output.
nn::Network build(const ArchSpec& spec);

// Binary container: magic "FSEGNET1", u64 LE header length, JSON header
// (arch id, spec, per-layer tensor shapes), then raw LE float32 blobs for all
// parameters and buffers in node order.
void save_weights(nn::Network& net, const ArchSpec& spec, const std::filesystem::path& path);
std::pair<nn::Network, ArchSpec> load_weights(const std::filesystem::path& path);
// Throws ArchMismatch when the stored arch id differs from expected_id.
std::pair<nn::Network, ArchSpec> load_weights_as(const std::filesystem::path& path,
                                                 const std::string& expected_id);

}  // namespace fiberseg
