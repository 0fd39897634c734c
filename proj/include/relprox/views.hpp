#pragma once

#include <cstdint>
#include <vector>

#include "relprox/common.hpp"

namespace relprox {

// Plain row-major real grid used for images and activation maps.
struct Grid {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    double at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
    double& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
};

enum class ViewKind { global, local };

struct View {
    Grid pixels;
    ViewKind kind = ViewKind::global;
    int row0 = 0;  // origin in source coordinates
    int col0 = 0;
};

// Half-open box [r0, r1) x [c0, c1).
struct BBox {
    int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
    int height() const { return r1 - r0; }
    int width() const { return c1 - c0; }
};

struct CropPlan {
    int k = 7;
    double patch_frac = 0.45;
    bool fixed_five = true;
    int n_random = 2;  // k - 5 when fixed_five, else k
    uint64_t rng_seed = 0;
};

CropPlan make_plan(int k, double patch_frac, uint64_t rng_seed);

// Threshold at the map mean, take the largest 4-connected component of
// above-mean cells (ties broken by row-major discovery order, i.e. the
// top-left-most component), and return its tight bounding box scaled from
// map coordinates to image coordinates.
BBox locate_global(const Grid& activation, int image_h, int image_w);

View crop_global(const Grid& image, const BBox& box);

// Five fixed crops (four corners and the centre) followed by uniformly
// placed random crops; all crops share one side length
// round(patch_frac * min(g dims)).
std::vector<View> crop_locals(const View& g, const CropPlan& plan);

// Warmup epochs use the five fixed crops only; afterwards k_max views with
// the five fixed plus k_max - 5 random ones.
CropPlan schedule(int epoch, int warmup_epochs, int k_max, double patch_frac, uint64_t rng_seed);

Grid bilinear_resize(const Grid& src, int out_h, int out_w);

}  // namespace relprox
