#include "splatfit/render.hpp"

#include <algorithm>
#include <cstring>
#include <thread>

namespace splatfit {

uint64_t RenderOutput::contributor_hash() const {
    // FNV-1a over the contribution stream
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (size_t px = 0; px + 1 < contrib_offsets.size(); ++px) {
        for (uint32_t k = contrib_offsets[px]; k < contrib_offsets[px + 1]; ++k)
            mix((static_cast<uint64_t>(px) << 32) ^ visible[contrib_index[k]].index);
    }
    for (const auto& rec : visible)
        mix((static_cast<uint64_t>(rec.index) << 8) ^
            (static_cast<uint64_t>(rec.clamp_mask[0]) << 4) ^
            (static_cast<uint64_t>(rec.clamp_mask[1]) << 2) ^ rec.clamp_mask[2]);
    return h;
}

std::vector<ProjectedRecord> depth_sort_cull(const GaussianCloud& cloud, const Camera& cam,
                                             const RenderOptions& opts) {
    const Vec3 cam_center = cam.extrinsics.center();
    std::vector<ProjectedRecord> visible;
    visible.reserve(cloud.size());

    for (uint32_t i = 0; i < cloud.size(); ++i) {
        const Gaussian& g = cloud.gaussians[i];
        const Vec3 p = g.position();
        const auto proj = project_gaussian(p, g.covariance(), cam);
        if (!proj) continue;

        const double radius = opts.footprint_sigma * std::sqrt(proj->cov2d.sym_eigenvalues()[0]);
        if (proj->mean2d.x + radius < 0.0 || proj->mean2d.x - radius > cam.intrinsics.width ||
            proj->mean2d.y + radius < 0.0 || proj->mean2d.y - radius > cam.intrinsics.height)
            continue;

        ProjectedRecord rec;
        rec.index = i;
        rec.cam_pos = cam.extrinsics.rotmat().mul(p) + cam.extrinsics.translation;
        rec.mean2d = proj->mean2d;
        rec.cov2d = proj->cov2d;
        rec.cov2d_inv = proj->cov2d.inverse();
        rec.depth = proj->depth;
        rec.radius = radius;
        rec.alpha = g.opacity();
        rec.view_dir = (p - cam_center).normalized();
        rec.color = sh_eval(g.sh, cloud.sh_degree, rec.view_dir, &rec.clamp_mask);
        visible.push_back(rec);
    }
    std::stable_sort(visible.begin(), visible.end(),
                     [](const ProjectedRecord& a, const ProjectedRecord& b) {
                         return a.depth < b.depth;
                     });
    return visible;
}

namespace {

constexpr int kTileSize = 16;

struct TileGrid {
    int tiles_x = 0, tiles_y = 0;
    // per tile: visible-list indices in depth order
    std::vector<std::vector<uint32_t>> lists;
};

TileGrid bin_to_tiles(const std::vector<ProjectedRecord>& visible, int width, int height) {
    TileGrid grid;
    grid.tiles_x = (width + kTileSize - 1) / kTileSize;
    grid.tiles_y = (height + kTileSize - 1) / kTileSize;
    grid.lists.resize(static_cast<size_t>(grid.tiles_x) * grid.tiles_y);
    for (uint32_t v = 0; v < visible.size(); ++v) {
        const ProjectedRecord& rec = visible[v];
        const int x0 = std::max(0, static_cast<int>((rec.mean2d.x - rec.radius) / kTileSize));
        const int x1 = std::min(grid.tiles_x - 1,
                                static_cast<int>((rec.mean2d.x + rec.radius) / kTileSize));
        const int y0 = std::max(0, static_cast<int>((rec.mean2d.y - rec.radius) / kTileSize));
        const int y1 = std::min(grid.tiles_y - 1,
                                static_cast<int>((rec.mean2d.y + rec.radius) / kTileSize));
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx)
                grid.lists[static_cast<size_t>(ty) * grid.tiles_x + tx].push_back(v);
    }
    return grid;
}

void composite_rows(const std::vector<ProjectedRecord>& visible, const TileGrid& grid,
                    const RenderOptions& opts, int width, int y_begin, int y_end,
                    double sigma_cut, RenderOutput& out,
                    std::vector<std::vector<std::pair<uint32_t, double>>>& row_contribs) {
    for (int y = y_begin; y < y_end; ++y) {
        const int ty = y / kTileSize;
        for (int x = 0; x < width; ++x) {
            const auto& list = grid.lists[static_cast<size_t>(ty) * grid.tiles_x + x / kTileSize];
            const Vec2 pixel{x + 0.5, y + 0.5};
            double t = 1.0;
            Vec3 color{0, 0, 0};
            auto& contribs = row_contribs[static_cast<size_t>(y - y_begin) * width + x];
            for (uint32_t v : list) {
                if (t < opts.transmittance_floor) break;
                const ProjectedRecord& rec = visible[v];
                const Vec2 d = pixel - rec.mean2d;
                const double maha = d.dot(rec.cov2d_inv.mul(d));
                if (maha > sigma_cut) continue;
                const double alpha_hat = rec.alpha * std::exp(-0.5 * maha);
                color += rec.color * (alpha_hat * t);
                contribs.emplace_back(v, alpha_hat);
                t *= 1.0 - alpha_hat;
            }
            color += opts.background * t;
            out.rgb.at(y, x, 0) = color.x;
            out.rgb.at(y, x, 1) = color.y;
            out.rgb.at(y, x, 2) = color.z;
            out.alpha.at(y, x, 0) = 1.0 - t;
            out.final_transmittance[static_cast<size_t>(y) * width + x] = t;
        }
    }
}

}  // namespace

RenderOutput rasterize(const GaussianCloud& cloud, const Camera& cam, const RenderOptions& opts) {
    const int width = cam.intrinsics.width, height = cam.intrinsics.height;
    RenderOutput out;
    out.width = width;
    out.height = height;
    out.rgb = Image(width, height, 3);
    out.alpha = Image(width, height, 1);
    out.background = opts.background;
    out.footprint_sigma = opts.footprint_sigma;
    out.transmittance_floor = opts.transmittance_floor;
    out.final_transmittance.assign(static_cast<size_t>(width) * height, 1.0);

    out.visible = depth_sort_cull(cloud, cam, opts);
    const double sigma_cut = opts.footprint_sigma * opts.footprint_sigma;
    const TileGrid grid = bin_to_tiles(out.visible, width, height);

    const int threads = std::max(1, opts.threads);
    std::vector<std::vector<std::vector<std::pair<uint32_t, double>>>> contribs(threads);
    std::vector<std::array<int, 2>> ranges;
    const int rows_per = (height + threads - 1) / threads;
    for (int tidx = 0; tidx < threads; ++tidx) {
        const int y0 = tidx * rows_per, y1 = std::min(height, y0 + rows_per);
        if (y0 >= y1) break;
        ranges.push_back({y0, y1});
    }
    for (size_t tidx = 0; tidx < ranges.size(); ++tidx)
        contribs[tidx].resize(static_cast<size_t>(ranges[tidx][1] - ranges[tidx][0]) * width);

    if (ranges.size() == 1) {
        composite_rows(out.visible, grid, opts, width, ranges[0][0], ranges[0][1], sigma_cut,
                       out, contribs[0]);
    } else {
        std::vector<std::thread> pool;
        for (size_t tidx = 0; tidx < ranges.size(); ++tidx)
            pool.emplace_back(composite_rows, std::cref(out.visible), std::cref(grid),
                              std::cref(opts), width, ranges[tidx][0], ranges[tidx][1],
                              sigma_cut, std::ref(out), std::ref(contribs[tidx]));
        for (auto& th : pool) th.join();
    }

    // flatten per-pixel lists into CSR, block order matches pixel order
    size_t total = 0;
    for (const auto& block : contribs)
        for (const auto& list : block) total += list.size();
    out.contrib_offsets.resize(static_cast<size_t>(width) * height + 1);
    out.contrib_index.resize(total);
    out.contrib_alpha.resize(total);
    size_t cursor = 0, px = 0;
    for (size_t tidx = 0; tidx < ranges.size(); ++tidx) {
        for (const auto& list : contribs[tidx]) {
            out.contrib_offsets[px++] = static_cast<uint32_t>(cursor);
            for (const auto& [v, a] : list) {
                out.contrib_index[cursor] = v;
                out.contrib_alpha[cursor] = a;
                ++cursor;
            }
        }
    }
    out.contrib_offsets[px] = static_cast<uint32_t>(cursor);
    return out;
}

}  // namespace splatfit
