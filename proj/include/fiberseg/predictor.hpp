#pragma once

#include <filesystem>
#include <vector>

#include "fiberseg/nn.hpp"
#include "fiberseg/tiler.hpp"

namespace fiberseg {

struct PredictConfig {
    TileSpec tile;           // empty -> family default (288/256 2D, 64/32 3D)
    float threshold = 0.5f;
    bool auto_pad = true;    // grow padding to the next valid tiling geometry
    int workers = 1;

    void validate() const;
};

TileSpec default_tile_spec(int dims);

struct PredictTiming {
    std::vector<double> slice_seconds;  // per slice (2D) or per slab (3D)
    double total_seconds = 0.0;
};

// Run a trained network over a whole (depth, h, w) volume in [0,1]:
// pad by the tile margin, tile, forward every tile with training=false,
// stitch central windows. dims comes from the architecture; 2D nets run
// slice by slice, 3D nets over the chunk grid.
// Throws GeometryMismatch when auto_pad is off and the geometry does not
// divide evenly.
FloatArray predict_volume(nn::Network& net, int dims, const FloatArray& volume,
                          const PredictConfig& cfg, PredictTiming* timing = nullptr);

struct InstanceStats {
    int32_t label;
    int64_t voxels;
    double cz, cy, cx;      // centroid (cz = 0 for 2D input)
    double equiv_radius;    // sqrt(mean cross-section area / pi) * spacing
};

struct Instances {
    LabelArray labels;
    std::vector<InstanceStats> stats;
};

// Connected components (4-connectivity in 2D, 6 in 3D) + per-fiber stats.
Instances label_instances(const MaskArray& mask, double spacing_um = 1.0);

// Per-voxel agreement categories for overlay rendering.
enum : uint8_t { kTrueNeg = 0, kTruePos = 1, kFalsePos = 2, kFalseNeg = 3 };
MaskArray category_map(const MaskArray& pred, const MaskArray& gold);

}  // namespace fiberseg
