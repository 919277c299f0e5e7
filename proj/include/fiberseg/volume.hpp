#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fiberseg/array.hpp"

namespace fiberseg {

enum class DType { U8, U16, F32, I32 };

size_t dtype_size(DType d);
const char* dtype_name(DType d);
DType dtype_from_name(const std::string& name);

// A 3D scalar voxel grid with native-dtype storage. Pixel data crosses into
// the normalized float world only through read/as_float paths.
struct Volume {
    std::array<int64_t, 3> shape{0, 0, 0};  // depth, height, width
    DType dtype = DType::U8;
    std::vector<uint8_t> bytes;             // row-major, little-endian
    double spacing_um = 1.0;
    std::string name;

    int64_t voxels() const { return shape[0] * shape[1] * shape[2]; }
    void validate() const;

    // Slice z as float32 normalized to [0,1] (integer dtypes divide by max).
    FloatArray slice_float(int64_t z) const;
    FloatArray as_float() const;  // whole volume, normalized

    static Volume from_float(const FloatArray& vol3d, DType dtype, double spacing_um = 1.0,
                             const std::string& name = {});
};

struct SliceStackSource {
    std::filesystem::path directory;
    std::string pattern;                       // glob with '*' wildcard
    std::vector<std::filesystem::path> files;  // sorted slice files
    int64_t height = 0, width = 0;
    DType dtype = DType::U8;

    int64_t depth() const { return static_cast<int64_t>(files.size()); }
    std::array<int64_t, 3> shape() const { return {depth(), height, width}; }
};

// Probe a slice-stack directory. Lazy: reads only the first slice header/pixels
// to learn shape and dtype; per-slice consistency is checked on read.
SliceStackSource open_stack(const std::filesystem::path& dir, const std::string& pattern = "*");

// Slice pixels as float32 normalized to [0,1] by dividing by the dtype max.
FloatArray read_slice(const SliceStackSource& src, int64_t z);

// Raw slice bytes in native dtype (for bit-exact assembly).
void read_slice_raw(const SliceStackSource& src, int64_t z, std::vector<uint8_t>& out, DType& dtype);

Volume read_stack(const SliceStackSource& src);

// Raw block + sidecar text header (path.meta: key=value lines).
void write_volume_raw(const Volume& vol, const std::filesystem::path& path);
Volume read_volume_raw(const std::filesystem::path& path);

// One lossless grayscale PNG per slice: <stem>_0000.png, ... 8/16-bit only.
void write_volume_slices(const Volume& vol, const std::filesystem::path& dir,
                         const std::string& stem = "slice");

void write_labels_raw(const LabelArray& labels, const std::filesystem::path& path,
                      double spacing_um = 1.0);
LabelArray read_labels_raw(const std::filesystem::path& path);

}  // namespace fiberseg
