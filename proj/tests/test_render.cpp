#include <doctest.h>

#include <algorithm>

#include "splatfit/render.hpp"
#include "splatfit/scenes.hpp"
#include "test_util.hpp"

using namespace splatfit;
using namespace splatfit::testing;

namespace {

GaussianCloud two_depth_cloud() {
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    cloud.gaussians.push_back(make_gaussian({0, 0, 2}, 0.05, 0.9, {1, 0, 0}));
    cloud.gaussians.push_back(make_gaussian({0, 0, 1}, 0.05, 0.9, {0, 1, 0}));
    return cloud;
}

}  // namespace

TEST_CASE("depth_sort_cull orders by camera depth") {
    const Camera cam = axis_camera(32, 32);
    const auto vis = depth_sort_cull(two_depth_cloud(), cam);
    REQUIRE(vis.size() == 2);
    CHECK(vis[0].index == 1);  // nearer one first
    CHECK(vis[1].index == 0);
    CHECK(vis[0].depth < vis[1].depth);
}

TEST_CASE("depth_sort_cull keeps original order on ties") {
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    for (int i = 0; i < 5; ++i)
        cloud.gaussians.push_back(make_gaussian({0.1 * i, 0, 2}, 0.05, 0.5, {1, 1, 1}));
    const auto vis = depth_sort_cull(cloud, axis_camera(32, 32));
    REQUIRE(vis.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(vis[i].index == static_cast<uint32_t>(i));
}

TEST_CASE("depth_sort_cull matches a brute-force selection sort") {
    const GaussianCloud cloud = make_synthetic_cloud(64, 41);
    const Camera cam = sample_orbit_cameras({1, 1, {80, 85}, {1.4, 1.5}, {60, 60}, {0, 0}, false,
                                             32, 32, 9})[0];
    const auto vis = depth_sort_cull(cloud, cam);

    // oracle: repeatedly pick the minimum-depth remaining record
    std::vector<std::pair<double, uint32_t>> pairs;
    for (const auto& rec : vis) pairs.push_back({rec.depth, rec.index});
    std::vector<std::pair<double, uint32_t>> oracle = pairs;
    for (size_t i = 0; i < oracle.size(); ++i) {
        size_t best = i;
        for (size_t j = i + 1; j < oracle.size(); ++j)
            if (oracle[j].first < oracle[best].first) best = j;
        if (best != i) std::rotate(oracle.begin() + i, oracle.begin() + best,
                                   oracle.begin() + best + 1);
    }
    CHECK(pairs == oracle);
}

TEST_CASE("depth_sort_cull removes behind-camera and off-frustum splats") {
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    cloud.gaussians.push_back(make_gaussian({0, 0, -2}, 0.05, 0.5, {1, 1, 1}));   // behind
    cloud.gaussians.push_back(make_gaussian({50, 0, 2}, 0.05, 0.5, {1, 1, 1}));   // far off screen
    cloud.gaussians.push_back(make_gaussian({0, 0, 2}, 0.05, 0.5, {1, 1, 1}));    // visible
    const auto vis = depth_sort_cull(cloud, axis_camera(32, 32));
    REQUIRE(vis.size() == 1);
    CHECK(vis[0].index == 2);
}

TEST_CASE("projected covariance eigenvalues respect the low-pass floor") {
    for (int trial = 0; trial < 10; ++trial) {
        const GaussianCloud cloud = make_synthetic_cloud(32, static_cast<uint64_t>(300 + trial));
        const Camera cam = sample_orbit_cameras({1, 1, {75, 90}, {1.2, 1.8}, {50, 70}, {0, 0.1},
                                                 true, 32, 32,
                                                 static_cast<uint64_t>(400 + trial)})[0];
        for (const ProjectedRecord& rec : depth_sort_cull(cloud, cam))
            CHECK(rec.cov2d.sym_eigenvalues()[1] >= 0.3 - 1e-12);
    }
}

TEST_CASE("rasterize of an empty footprint is pure background") {
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    cloud.gaussians.push_back(make_gaussian({0, 0, -5}, 0.05, 0.5, {1, 0, 0}));  // culled
    RenderOptions opts;
    opts.background = {0.2, 0.4, 0.6};
    const RenderOutput out = rasterize(cloud, axis_camera(16, 16), opts);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            CHECK(out.rgb.at(y, x, 0) == 0.2);
            CHECK(out.rgb.at(y, x, 1) == 0.4);
            CHECK(out.rgb.at(y, x, 2) == 0.6);
            CHECK(out.alpha.at(y, x, 0) == 0.0);
        }
}

TEST_CASE("single Gaussian pixel value matches the closed form") {
    const Vec3 color{0.8, 0.3, 0.1};
    const GaussianCloud cloud = single_gaussian_cloud({0, 0, 2}, 0.08, 0.7, color);
    RenderOptions opts;
    opts.background = {1, 1, 1};
    const Camera cam = axis_camera(33, 33);  // center pixel (16,16) has center 16.5
    const RenderOutput out = rasterize(cloud, cam, opts);

    const auto proj = project_gaussian(cloud.gaussians[0].position(),
                                       cloud.gaussians[0].covariance(), cam);
    REQUIRE(proj.has_value());
    const Vec2 pixel{16.5, 16.5};
    const Vec2 d = pixel - proj->mean2d;
    const Mat2 inv = proj->cov2d.inverse();
    const double alpha_hat = 0.7 * std::exp(-0.5 * d.dot(inv.mul(d)));
    const double expect_r = color.x * alpha_hat + (1 - alpha_hat) * 1.0;
    CHECK(out.rgb.at(16, 16, 0) == doctest::Approx(expect_r).epsilon(1e-9));
    CHECK(out.alpha.at(16, 16, 0) == doctest::Approx(alpha_hat).epsilon(1e-9));
}

TEST_CASE("an opaque front Gaussian occludes the back one") {
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    cloud.gaussians.push_back(make_gaussian({0, 0, 1}, 0.2, 0.999999, {1, 0, 0}));
    cloud.gaussians.push_back(make_gaussian({0, 0, 2}, 0.2, 0.9, {0, 1, 0}));
    RenderOptions opts;
    opts.background = {0, 0, 0};
    const RenderOutput out = rasterize(cloud, axis_camera(33, 33), opts);
    CHECK(out.rgb.at(16, 16, 1) < 1e-4);
    CHECK(out.rgb.at(16, 16, 0) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("energy bound: weights plus final transmittance sum to one") {
    const GaussianCloud cloud = make_synthetic_cloud(48, 51);
    const Camera cam = sample_orbit_cameras({1, 1, {78, 88}, {1.3, 1.6}, {55, 65}, {0, 0.05},
                                             true, 32, 32, 13})[0];
    const RenderOutput out = rasterize(cloud, cam);
    for (size_t px = 0; px + 1 < out.contrib_offsets.size(); ++px) {
        double t = 1.0, weight_sum = 0.0;
        for (uint32_t k = out.contrib_offsets[px]; k < out.contrib_offsets[px + 1]; ++k) {
            weight_sum += out.contrib_alpha[k] * t;
            t *= 1.0 - out.contrib_alpha[k];
        }
        CHECK(std::abs(weight_sum + out.final_transmittance[px] - 1.0) < 1e-9);
    }
}

TEST_CASE("storage permutation does not change the image") {
    GaussianCloud cloud = make_synthetic_cloud(32, 61);
    const Camera cam = sample_orbit_cameras({1, 1, {76, 89}, {1.2, 1.8}, {50, 70}, {0, 0.1},
                                             true, 32, 32, 17})[0];
    const RenderOutput a = rasterize(cloud, cam);

    GaussianCloud shuffled = cloud;
    Rng rng(62);
    for (size_t i = shuffled.gaussians.size(); i > 1; --i)
        std::swap(shuffled.gaussians[i - 1], shuffled.gaussians[rng.below(i)]);
    const RenderOutput b = rasterize(shuffled, cam);
    for (size_t i = 0; i < a.rgb.data.size(); ++i)
        CHECK(a.rgb.data[i] == doctest::Approx(b.rgb.data[i]).epsilon(1e-12));
}

TEST_CASE("deterministic mode is bit-identical across runs and thread counts") {
    const GaussianCloud cloud = make_synthetic_cloud(64, 71);
    const Camera cam = sample_orbit_cameras({1, 1, {75, 90}, {1.2, 1.8}, {50, 70}, {0, 0.1},
                                             true, 64, 64, 19})[0];
    RenderOptions opts;
    const RenderOutput a = rasterize(cloud, cam, opts);
    const RenderOutput b = rasterize(cloud, cam, opts);
    CHECK(a.rgb.data == b.rgb.data);
    CHECK(a.alpha.data == b.alpha.data);

    opts.threads = 3;
    const RenderOutput c = rasterize(cloud, cam, opts);
    CHECK(a.rgb.data == c.rgb.data);
    CHECK(a.contrib_alpha == c.contrib_alpha);
    CHECK(a.contributor_hash() == c.contributor_hash());
}

TEST_CASE("raising opacity_raw never lowers the splat's own pixel weight") {
    Rng rng(83);
    for (int trial = 0; trial < 20; ++trial) {
        GaussianCloud cloud = make_synthetic_cloud(8, static_cast<uint64_t>(100 + trial));
        const Camera cam = sample_orbit_cameras({1, 1, {75, 90}, {1.2, 1.8}, {50, 70}, {0, 0.1},
                                                 true, 24, 24, static_cast<uint64_t>(200 + trial)})[0];
        const size_t target = rng.below(cloud.size());
        const RenderOutput before = rasterize(cloud, cam);
        cloud.gaussians[target].opacity_raw += rng.uniform(0.1, 1.5);
        const RenderOutput after = rasterize(cloud, cam);

        auto weight_of = [target](const RenderOutput& out, size_t px) {
            double t = 1.0, w = 0.0;
            for (uint32_t k = out.contrib_offsets[px]; k < out.contrib_offsets[px + 1]; ++k) {
                const double a = out.contrib_alpha[k];
                if (out.visible[out.contrib_index[k]].index == target) w = a * t;
                t *= 1.0 - a;
            }
            return w;
        };
        for (size_t px = 0; px + 1 < before.contrib_offsets.size(); ++px) {
            const double wb = weight_of(before, px);
            if (wb > 0.0) CHECK(weight_of(after, px) >= wb - 1e-12);
        }
    }
}

TEST_CASE("rgb equals foreground plus transmitted background exactly") {
    const GaussianCloud cloud = make_synthetic_cloud(24, 91);
    RenderOptions opts;
    opts.background = {0.9, 0.7, 0.5};
    const Camera cam = sample_orbit_cameras({1, 1, {75, 90}, {1.2, 1.8}, {50, 70}, {0, 0.1},
                                             true, 24, 24, 23})[0];
    const RenderOutput out = rasterize(cloud, cam, opts);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
            const size_t px = static_cast<size_t>(y) * 24 + x;
            const double t = out.final_transmittance[px];
            CHECK(std::abs((1.0 - out.alpha.at(y, x, 0)) - t) < 1e-15);
            // recompute the foreground from the aux lists
            Vec3 fg{0, 0, 0};
            double trans = 1.0;
            for (uint32_t k = out.contrib_offsets[px]; k < out.contrib_offsets[px + 1]; ++k) {
                const double a = out.contrib_alpha[k];
                fg += out.visible[out.contrib_index[k]].color * (a * trans);
                trans *= 1.0 - a;
            }
            CHECK(out.rgb.at(y, x, 0) ==
                  doctest::Approx(fg.x + t * opts.background.x).epsilon(1e-12));
            CHECK(out.rgb.at(y, x, 1) ==
                  doctest::Approx(fg.y + t * opts.background.y).epsilon(1e-12));
            CHECK(out.rgb.at(y, x, 2) ==
                  doctest::Approx(fg.z + t * opts.background.z).epsilon(1e-12));
        }
}
