#include "fiberseg/tiler.hpp"

#include <algorithm>
#include <sstream>

namespace fiberseg {

void TileSpec::validate() const {
    if (tile.empty() || tile.size() != stride.size())
        throw InvalidSpec("TileSpec: tile/stride rank mismatch");
    for (size_t a = 0; a < tile.size(); ++a) {
        if (stride[a] <= 0 || tile[a] <= stride[a])
            throw InvalidSpec("TileSpec: require tile > stride > 0 per axis");
        if ((tile[a] - stride[a]) % 2 != 0)
            throw InvalidSpec("TileSpec: overlap must be symmetric (tile - stride even)");
    }
}

FloatArray pad_zero(const FloatArray& field, int64_t margin) {
    if (margin < 0) throw InvalidSpec("pad: margin must be >= 0");
    if (margin == 0) return field;
    std::vector<int64_t> out_shape = field.shape();
    for (auto& e : out_shape) e += 2 * margin;
    FloatArray out(out_shape, 0.0f);
    if (field.rank() == 2) {
        for (int64_t r = 0; r < field.extent(0); ++r)
            std::copy_n(&field(r, 0), field.extent(1), &out(r + margin, margin));
    } else if (field.rank() == 3) {
        for (int64_t z = 0; z < field.extent(0); ++z)
            for (int64_t y = 0; y < field.extent(1); ++y)
                std::copy_n(&field(z, y, 0), field.extent(2), &out(z + margin, y + margin, margin));
    } else {
        throw InvalidSpec("pad: only 2D/3D fields supported");
    }
    return out;
}

FloatArray crop(const FloatArray& field, int64_t margin) {
    if (margin < 0) throw InvalidSpec("crop: margin must be >= 0");
    if (margin == 0) return field;
    std::vector<int64_t> out_shape = field.shape();
    for (auto& e : out_shape) {
        e -= 2 * margin;
        if (e < 1) throw ShapeMismatch("crop: margin exceeds extent");
    }
    FloatArray out(out_shape);
    if (field.rank() == 2) {
        for (int64_t r = 0; r < out.extent(0); ++r)
            std::copy_n(&field(r + margin, margin), out.extent(1), &out(r, 0));
    } else if (field.rank() == 3) {
        for (int64_t z = 0; z < out.extent(0); ++z)
            for (int64_t y = 0; y < out.extent(1); ++y)
                std::copy_n(&field(z + margin, y + margin, margin), out.extent(2), &out(z, y, 0));
    } else {
        throw InvalidSpec("crop: only 2D/3D fields supported");
    }
    return out;
}

std::vector<int64_t> padding_deficit(const std::vector<int64_t>& extent, const TileSpec& spec) {
    std::vector<int64_t> deficit(extent.size(), 0);
    for (size_t a = 0; a < extent.size(); ++a) {
        if (extent[a] < spec.tile[a]) {
            deficit[a] = spec.tile[a] - extent[a];
        } else {
            int64_t rem = (extent[a] - spec.tile[a]) % spec.stride[a];
            deficit[a] = rem == 0 ? 0 : spec.stride[a] - rem;
        }
    }
    return deficit;
}

std::vector<int64_t> tile_counts(const std::vector<int64_t>& extent, const TileSpec& spec) {
    spec.validate();
    if (extent.size() != spec.tile.size())
        throw ShapeMismatch("tile_counts: extent rank does not match spec");
    auto deficit = padding_deficit(extent, spec);
    for (size_t a = 0; a < extent.size(); ++a) {
        if (deficit[a] != 0) {
            std::ostringstream os;
            os << "tile geometry mismatch on axis " << a << ": extent " << extent[a]
               << " with tile " << spec.tile[a] << "/stride " << spec.stride[a]
               << "; pad axis by " << deficit[a] << " to fix";
            throw GeometryMismatch(os.str());
        }
    }
    std::vector<int64_t> counts(extent.size());
    for (size_t a = 0; a < extent.size(); ++a)
        counts[a] = (extent[a] - spec.tile[a]) / spec.stride[a] + 1;
    return counts;
}

namespace {

void copy_block(const FloatArray& src, const std::vector<int64_t>& src_origin,
                FloatArray& dst, const std::vector<int64_t>& dst_origin,
                const std::vector<int64_t>& block) {
    if (block.size() == 2) {
        for (int64_t r = 0; r < block[0]; ++r)
            std::copy_n(&src(src_origin[0] + r, src_origin[1]), block[1],
                        &dst(dst_origin[0] + r, dst_origin[1]));
    } else {
        for (int64_t z = 0; z < block[0]; ++z)
            for (int64_t y = 0; y < block[1]; ++y)
                std::copy_n(&src(src_origin[0] + z, src_origin[1] + y, src_origin[2]), block[2],
                            &dst(dst_origin[0] + z, dst_origin[1] + y, dst_origin[2]));
    }
}

}  // namespace

TileSet tile_grid(const FloatArray& padded, const TileSpec& spec) {
    auto counts = tile_counts(padded.shape(), spec);
    TileSet set;
    set.grid_shape = counts;
    set.spec = spec;

    const int rank = padded.rank();
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    int64_t total = 1;
    for (int64_t c : counts) total *= c;
    set.tiles.reserve(static_cast<size_t>(total));

    for (int64_t flat = 0; flat < total; ++flat) {
        // decode row-major grid index
        int64_t rem = flat;
        for (int a = rank - 1; a >= 0; --a) {
            idx[static_cast<size_t>(a)] = rem % counts[static_cast<size_t>(a)];
            rem /= counts[static_cast<size_t>(a)];
        }
        Tile t;
        t.grid_index = idx;
        t.anchor.resize(static_cast<size_t>(rank));
        for (int a = 0; a < rank; ++a)
            t.anchor[static_cast<size_t>(a)] = idx[static_cast<size_t>(a)] * spec.stride[static_cast<size_t>(a)];
        t.data = FloatArray(spec.tile);
        copy_block(padded, t.anchor, t.data, std::vector<int64_t>(static_cast<size_t>(rank), 0), spec.tile);
        set.tiles.push_back(std::move(t));
    }
    return set;
}

TileSet chunk_grid(const FloatArray& padded, const TileSpec& spec) {
    if (padded.rank() != 3) throw ShapeMismatch("chunk_grid: expects a 3D volume");
    return tile_grid(padded, spec);
}

FloatArray stitch(const TileSet& set, const TileSpec& spec, const std::vector<int64_t>& out_shape) {
    spec.validate();
    const int rank = spec.rank();
    if (static_cast<int>(out_shape.size()) != rank)
        throw ShapeMismatch("stitch: out_shape rank does not match spec");

    std::vector<int64_t> counts(static_cast<size_t>(rank));
    int64_t total = 1;
    for (int a = 0; a < rank; ++a) {
        if (out_shape[static_cast<size_t>(a)] % spec.stride[static_cast<size_t>(a)] != 0)
            throw GeometryMismatch("stitch: out_shape not a multiple of stride");
        counts[static_cast<size_t>(a)] = out_shape[static_cast<size_t>(a)] / spec.stride[static_cast<size_t>(a)];
        total *= counts[static_cast<size_t>(a)];
    }

    std::vector<char> seen(static_cast<size_t>(total), 0);
    FloatArray out(out_shape, 0.0f);

    for (const Tile& t : set.tiles) {
        if (static_cast<int>(t.grid_index.size()) != rank)
            throw ShapeMismatch("stitch: tile grid_index rank mismatch");
        int64_t flat = 0;
        for (int a = 0; a < rank; ++a) {
            int64_t gi = t.grid_index[static_cast<size_t>(a)];
            if (gi < 0 || gi >= counts[static_cast<size_t>(a)])
                throw ShapeMismatch("stitch: tile grid_index out of range");
            flat = flat * counts[static_cast<size_t>(a)] + gi;
        }
        if (seen[static_cast<size_t>(flat)])
            throw DuplicateTile("stitch: duplicate tile at grid index");
        seen[static_cast<size_t>(flat)] = 1;
        if (t.data.shape() != spec.tile)
            throw ShapeMismatch("stitch: tile data shape does not match spec");

        std::vector<int64_t> src_origin(static_cast<size_t>(rank));
        std::vector<int64_t> dst_origin(static_cast<size_t>(rank));
        for (int a = 0; a < rank; ++a) {
            src_origin[static_cast<size_t>(a)] = spec.margin(a);
            dst_origin[static_cast<size_t>(a)] =
                t.grid_index[static_cast<size_t>(a)] * spec.stride[static_cast<size_t>(a)];
        }
        copy_block(t.data, src_origin, out, dst_origin, spec.stride);
    }

    for (int64_t i = 0; i < total; ++i)
        if (!seen[static_cast<size_t>(i)])
            throw MissingTile("stitch: tile set is missing a grid position");
    return out;
}

}  // namespace fiberseg
