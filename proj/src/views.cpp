#include "relprox/views.hpp"

#include <algorithm>
#include <cmath>

#include "relprox/rng.hpp"

namespace relprox {

CropPlan make_plan(int k, double patch_frac, uint64_t rng_seed) {
    if (k < 1) fail(ErrKind::invalid_argument, "crop plan: k must be >= 1");
    if (!(patch_frac > 0.0) || patch_frac > 0.5)
        fail(ErrKind::invalid_argument, "crop plan: patch_frac must be in (0, 0.5]");
    CropPlan p;
    p.k = k;
    p.patch_frac = patch_frac;
    p.fixed_five = k >= 5;
    p.n_random = p.fixed_five ? k - 5 : k;
    p.rng_seed = rng_seed;
    return p;
}

BBox locate_global(const Grid& map, int image_h, int image_w) {
    if (map.h < 1 || map.w < 1) fail(ErrKind::invalid_argument, "locate_global: empty map");
    double mean = 0.0;
    for (double x : map.v) {
        if (!std::isfinite(x)) fail(ErrKind::non_finite, "locate_global: non-finite activation");
        mean += x;
    }
    mean /= static_cast<double>(map.v.size());

    std::vector<uint8_t> mask(map.v.size(), 0);
    bool any = false;
    for (size_t i = 0; i < map.v.size(); ++i) {
        mask[i] = map.v[i] > mean ? 1 : 0;
        any = any || mask[i];
    }
    if (!any) fail(ErrKind::no_salient_region, "locate_global: constant activation map");

    // Flood fill in row-major scan order; the first component found wins
    // size ties, which is the top-left-most one.
    std::vector<int> label(map.v.size(), -1);
    int best_size = 0;
    BBox best{};
    std::vector<int> stack;
    int next_label = 0;
    for (int r = 0; r < map.h; ++r) {
        for (int c = 0; c < map.w; ++c) {
            int idx = r * map.w + c;
            if (!mask[static_cast<size_t>(idx)] || label[static_cast<size_t>(idx)] >= 0) continue;
            int size = 0;
            BBox box{r, c, r + 1, c + 1};
            stack.push_back(idx);
            label[static_cast<size_t>(idx)] = next_label;
            while (!stack.empty()) {
                int cur = stack.back();
                stack.pop_back();
                ++size;
                int cr = cur / map.w, cc = cur % map.w;
                box.r0 = std::min(box.r0, cr);
                box.c0 = std::min(box.c0, cc);
                box.r1 = std::max(box.r1, cr + 1);
                box.c1 = std::max(box.c1, cc + 1);
                const int dr[4] = {-1, 1, 0, 0};
                const int dc[4] = {0, 0, -1, 1};
                for (int d = 0; d < 4; ++d) {
                    int nr = cr + dr[d], nc = cc + dc[d];
                    if (nr < 0 || nr >= map.h || nc < 0 || nc >= map.w) continue;
                    int ni = nr * map.w + nc;
                    if (mask[static_cast<size_t>(ni)] && label[static_cast<size_t>(ni)] < 0) {
                        label[static_cast<size_t>(ni)] = next_label;
                        stack.push_back(ni);
                    }
                }
            }
            if (size > best_size) {
                best_size = size;
                best = box;
            }
            ++next_label;
        }
    }

    // Scale map cells to image pixels.
    BBox out;
    out.r0 = best.r0 * image_h / map.h;
    out.c0 = best.c0 * image_w / map.w;
    out.r1 = (best.r1 * image_h + map.h - 1) / map.h;
    out.c1 = (best.c1 * image_w + map.w - 1) / map.w;
    out.r1 = std::min(out.r1, image_h);
    out.c1 = std::min(out.c1, image_w);
    return out;
}

View crop_global(const Grid& image, const BBox& box) {
    if (box.r0 < 0 || box.c0 < 0 || box.r1 > image.h || box.c1 > image.w || box.height() < 1 ||
        box.width() < 1)
        fail(ErrKind::invalid_argument, "crop_global: bounding box outside image");
    View v;
    v.kind = ViewKind::global;
    v.row0 = box.r0;
    v.col0 = box.c0;
    v.pixels.h = box.height();
    v.pixels.w = box.width();
    v.pixels.v.resize(static_cast<size_t>(v.pixels.h) * v.pixels.w);
    for (int r = 0; r < v.pixels.h; ++r)
        for (int c = 0; c < v.pixels.w; ++c)
            v.pixels.at(r, c) = image.at(box.r0 + r, box.c0 + c);
    return v;
}

std::vector<View> crop_locals(const View& g, const CropPlan& plan) {
    if (plan.fixed_five && plan.k < 5)
        fail(ErrKind::invalid_argument, "crop_locals: k < 5 with fixed_five");
    int h = g.pixels.h, w = g.pixels.w;
    int side = static_cast<int>(std::lround(plan.patch_frac * std::min(h, w)));
    if (side < 2) fail(ErrKind::invalid_argument, "crop_locals: patch side < 2");
    if (side > h || side > w)
        fail(ErrKind::invalid_argument, "crop_locals: patch larger than global view");

    std::vector<std::pair<int, int>> origins;
    if (plan.fixed_five) {
        origins = {{0, 0},
                   {0, w - side},
                   {h - side, 0},
                   {h - side, w - side},
                   {(h - side) / 2, (w - side) / 2}};
    }
    Rng rng(plan.rng_seed);
    int n_random = plan.fixed_five ? plan.k - 5 : plan.k;
    for (int i = 0; i < n_random; ++i)
        origins.emplace_back(rng.uniform_int(h - side + 1), rng.uniform_int(w - side + 1));

    std::vector<View> out;
    out.reserve(origins.size());
    for (auto [r0, c0] : origins) {
        View v;
        v.kind = ViewKind::local;
        v.row0 = g.row0 + r0;
        v.col0 = g.col0 + c0;
        v.pixels.h = side;
        v.pixels.w = side;
        v.pixels.v.resize(static_cast<size_t>(side) * side);
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c) v.pixels.at(r, c) = g.pixels.at(r0 + r, c0 + c);
        out.push_back(std::move(v));
    }
    return out;
}

CropPlan schedule(int epoch, int warmup_epochs, int k_max, double patch_frac, uint64_t rng_seed) {
    if (k_max < 5) fail(ErrKind::invalid_argument, "schedule: k_max < 5");
    if (warmup_epochs < 0) fail(ErrKind::invalid_argument, "schedule: warmup_epochs < 0");
    int k = epoch < warmup_epochs ? 5 : k_max;
    return make_plan(k, patch_frac, rng_seed);
}

Grid bilinear_resize(const Grid& src, int out_h, int out_w) {
    if (src.h < 1 || src.w < 1 || out_h < 1 || out_w < 1)
        fail(ErrKind::invalid_argument, "bilinear_resize: empty grid");
    Grid dst;
    dst.h = out_h;
    dst.w = out_w;
    dst.v.resize(static_cast<size_t>(out_h) * out_w);
    double sy = static_cast<double>(src.h) / out_h;
    double sx = static_cast<double>(src.w) / out_w;
    for (int r = 0; r < out_h; ++r) {
        double fy = (r + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y1 = std::min(std::max(y0 + 1, 0), src.h - 1);
        y0 = std::min(std::max(y0, 0), src.h - 1);
        for (int c = 0; c < out_w; ++c) {
            double fx = (c + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x1 = std::min(std::max(x0 + 1, 0), src.w - 1);
            x0 = std::min(std::max(x0, 0), src.w - 1);
            double top = src.at(y0, x0) * (1.0 - wx) + src.at(y0, x1) * wx;
            double bot = src.at(y1, x0) * (1.0 - wx) + src.at(y1, x1) * wx;
            dst.at(r, c) = top * (1.0 - wy) + bot * wy;
        }
    }
    return dst;
}

}  // namespace relprox
