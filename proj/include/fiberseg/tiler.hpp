#pragma once

#include <optional>
#include <vector>

#include "fiberseg/array.hpp"

namespace fiberseg {

// Overlapping tile geometry. margin is the overlap half-width per axis,
// (tile - stride) / 2; the central stride-sized window of each tile is the
// part that survives stitching.
struct TileSpec {
    std::vector<int64_t> tile;    // tile extent per axis
    std::vector<int64_t> stride;  // step between tile anchors per axis

    void validate() const;
    int64_t margin(int axis) const { return (tile[static_cast<size_t>(axis)] - stride[static_cast<size_t>(axis)]) / 2; }
    int rank() const { return static_cast<int>(tile.size()); }

    static TileSpec square2d(int64_t tile, int64_t stride) { return {{tile, tile}, {stride, stride}}; }
    static TileSpec cube3d(int64_t tile, int64_t stride) { return {{tile, tile, tile}, {stride, stride, stride}}; }
};

struct Tile {
    FloatArray data;
    std::vector<int64_t> anchor;      // origin in padded source coordinates
    std::vector<int64_t> grid_index;  // position in the tile grid
};

struct TileSet {
    std::vector<Tile> tiles;
    std::vector<int64_t> grid_shape;  // tiles per axis
    TileSpec spec;
};

// Zero-pad by `margin` voxels on every side of every axis.
FloatArray pad_zero(const FloatArray& field, int64_t margin);

// Remove `margin` voxels from every side of every axis.
FloatArray crop(const FloatArray& field, int64_t margin);

// Number of tiles per axis for a padded extent; throws GeometryMismatch if the
// extent does not satisfy (extent - tile) % stride == 0, with a message that
// reports the minimal extra padding that would fix it.
std::vector<int64_t> tile_counts(const std::vector<int64_t>& extent, const TileSpec& spec);

// Extra padding (total, per axis) needed to reach the next valid extent; all
// zeros when the extent already satisfies the divisibility rule.
std::vector<int64_t> padding_deficit(const std::vector<int64_t>& extent, const TileSpec& spec);

// Cut a padded field into overlapping tiles, row-major grid order.
TileSet tile_grid(const FloatArray& padded, const TileSpec& spec);
TileSet chunk_grid(const FloatArray& padded, const TileSpec& spec);  // 3D alias

// Reassemble per-tile outputs: every output voxel comes from the central
// stride-sized window of exactly one tile. out_shape is the unpadded extent.
FloatArray stitch(const TileSet& tiles, const TileSpec& spec, const std::vector<int64_t>& out_shape);

}  // namespace fiberseg
