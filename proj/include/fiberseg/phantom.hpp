#pragma once

#include <cstdint>
#include <vector>

#include "fiberseg/array.hpp"

namespace fiberseg {

// Synthetic fiber bed: bright non-overlapping cylinders along z on a darker
// background, Gaussian noise, optional wiped-out defect slices.
struct PhantomConfig {
    int n_fibers = 200;
    double radius_min = 6.5;  // pixels
    double radius_max = 10.0;
    int64_t depth = 64;
    int64_t size = 512;  // square slices
    float background = 0.2f;
    float foreground = 0.8f;
    float noise_sigma = 0.05f;
    std::vector<int64_t> defect_slices;  // wiped to defect_value (+ noise)
    float defect_value = 0.05f;
    uint64_t seed = 0;
    int max_attempts = 100000;  // placement budget across all fibers

    void validate() const;
};

struct FiberSite {
    double cx, cy;  // centre in pixels
    double radius;
};

struct Phantom {
    FloatArray volume;      // (depth, size, size), values in [0, 1]
    MaskArray gold_mask;    // fiber voxels, defects ignored (truth is geometric)
    LabelArray gold_labels; // one label per fiber, constant along z
    std::vector<FiberSite> fibers;
    std::vector<int64_t> defect_slices;
};

Phantom make_phantom(const PhantomConfig& cfg);

}  // namespace fiberseg
