#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "fiberseg/nn.hpp"

namespace fiberseg {

struct AugmentConfig {
    float rotation_range = 10.0f;  // degrees, sampled in [-r, r]
    bool horizontal_flip = true;
    bool vertical_flip = true;
    float width_shift = 0.05f;   // fraction of width
    float height_shift = 0.05f;  // fraction of height
    float zoom_range = 0.1f;     // per-axis scale sampled in [1-z, 1+z]
    float shear_range = 5.0f;    // degrees
    bool z_flip = true;          // 3D only
    uint64_t seed = 0;

    void validate() const;
};

// Homogeneous affine acting on (x, y[, z], 1) column vectors with the origin
// at the geometric centre of the plane. 2D transforms are 3x3, 3D are 4x4
// (in-plane block plus an optional z reflection). Translation entries are
// stored as fractions of the matching extent; warp() converts to pixels.
struct Transform {
    int dims = 2;
    std::array<double, 16> m{};  // row-major, stride dims+1

    double at(int r, int c) const { return m[static_cast<size_t>(r * (dims + 1) + c)]; }
    double& at(int r, int c) { return m[static_cast<size_t>(r * (dims + 1) + c)]; }

    static Transform identity(int dims);
    bool is_identity(double tol = 1e-12) const;
};

Transform compose(const Transform& a, const Transform& b);  // a after b

// Draw order is fixed: rotation, height shift, width shift, shear, zoom x,
// zoom y, then one coin per enabled flip (h, v, z).
Transform sample_transform(const AugmentConfig& cfg, int dims, std::mt19937_64& rng);

// Warp a (h, w) or (d, h, w) field; out-of-frame reads fill with 0. Bilinear
// by default, nearest-neighbour when nearest = true. Source coordinates
// within 1e-9 of a grid point are snapped, so flips and axis-aligned 90-degree
// rotations are exact index permutations.
FloatArray warp(const Transform& t, const FloatArray& field, bool nearest = false);

// Same transform on both: bilinear image, nearest label (stays binary).
std::pair<FloatArray, MaskArray> apply(const Transform& t, const FloatArray& image,
                                       const MaskArray& label);

// Adapter for nn::train: items are [1, H, W] or [1, D, H, W]; a fresh
// transform is drawn from cfg.seed mixed with the per-item seed.
nn::AugmentFn make_augment_fn(const AugmentConfig& cfg);

}  // namespace fiberseg
