#pragma once

#include <optional>
#include <vector>

#include "fiberseg/array.hpp"

namespace fiberseg {

struct CircleRoi {
    double center_y = 0.0, center_x = 0.0, radius = 0.0;
};

struct ClassicParams {
    float tv_weight = 0.3f;
    int tv_max_iter = 200;
    float tv_tol = 2e-4f;
    int otsu_classes = 4;
    int fiber_class = -1;  // -1: highest class
    int equalize_bins = 256;
    int wusem_initial_radius = 0;
    int wusem_delta_radius = 2;
    bool watershed_line = true;
    std::optional<CircleRoi> roi;  // default: full frame

    void validate() const;
};

// Empirical-CDF equalization: each pixel maps to the CDF of its histogram bin.
// Monotone non-decreasing by construction.
FloatArray equalize_histogram(const FloatArray& field, int bins = 256);

struct TvResult {
    FloatArray field;
    bool converged = false;
    int iterations = 0;
};

// Chambolle dual-projection TV denoising: approximate minimizer of
// |u - f|^2 / (2 weight) + TV(u). weight = 0 returns the input unchanged.
TvResult denoise_tv_chambolle(const FloatArray& field, float weight,
                              int max_iter = 200, float tol = 2e-4f);

double total_variation(const FloatArray& field);

// classes-1 thresholds maximizing between-class variance over a 256-bin
// histogram (lookup-table recurrence). Thresholds are bin upper edges in [0,1].
std::vector<float> multi_otsu(const FloatArray& field, int classes, int bins = 256);

// Mask of pixels whose class index equals fiber_class (1-based; pixels equal
// to a threshold belong to the upper class).
MaskArray binarize_class(const FloatArray& field, const std::vector<float>& thresholds,
                         int fiber_class);

// Exact squared Euclidean distance to the nearest background (zero) pixel.
NdArray<int64_t> squared_edt(const MaskArray& mask);

// Binary erosion by a discrete disk of radius r (dx^2+dy^2 <= r^2); r = 0 is
// the identity.
MaskArray erode_disk(const MaskArray& mask, int radius);

// 4-connected (2D) / 6-connected (3D) components; labels 1..K in raster order
// of first occurrence.
LabelArray connected_components(const MaskArray& mask);
int32_t max_label(const LabelArray& labels);

// Marker-based watershed of the negated distance transform, constrained to the
// mask. 4-connectivity. watershed_line keeps a 1-px unlabeled boundary
// between distinct basins.
LabelArray watershed(const NdArray<int64_t>& sq_dist, const LabelArray& markers,
                     const MaskArray& mask, bool watershed_line);

// Watershed-using-successive-erosions: erode with disks of growing radius;
// components that do not survive the next erosion level become markers; then
// marker-based watershed on the distance transform of the mask.
LabelArray wusem(const MaskArray& mask, int initial_radius, int delta_radius,
                 bool watershed_line);

// Full unsupervised pipeline: equalize -> TV -> multi-Otsu -> binarize ->
// (optional ROI) -> WUSEM.
LabelArray segment_classic(const FloatArray& slice, const ClassicParams& params);

}  // namespace fiberseg
