#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "splatfit/image.hpp"
#include "splatfit/render.hpp"
#include "splatfit/rng.hpp"

namespace splatfit {

/// Randomized orbit trajectories around the origin; elevation and FOV are
/// drawn once per orbit, radius and jitter per view.
struct OrbitConfig {
    int orbits = 4;
    int views_per_orbit = 32;
    std::array<double, 2> elevation_deg{75.0, 90.0};
    std::array<double, 2> radius{1.2, 1.8};
    std::array<double, 2> fov_deg{50.0, 70.0};
    std::array<double, 2> lookat_jitter{0.0, 0.1};
    bool azimuth_jitter = true;  // delta_j ~ U(-pi/V, pi/V)
    int width = 64, height = 64;
    uint64_t seed = 0;
};

struct Dataset {
    std::vector<Image> images;  // H x W x 3
    std::vector<Image> alphas;  // H x W x 1
    std::vector<Camera> cameras;
    std::optional<GaussianCloud> gt_cloud;
    std::optional<BBox3> metric_extent;
};

std::vector<Camera> sample_orbit_cameras(const OrbitConfig& cfg);

enum class CloudStyle { kBlob, kShell };

/// Seed-deterministic cloud inside the unit sphere with the mean position
/// re-centered to the origin; attributes stay inside the activation ranges.
GaussianCloud make_synthetic_cloud(int n, uint64_t seed, CloudStyle style = CloudStyle::kBlob,
                                   std::array<double, 2> shell_annulus = {0.55, 0.8});

Dataset render_dataset(const GaussianCloud& cloud, const std::vector<Camera>& cameras,
                       const RenderOptions& opts = {});

/// Composes each extrinsic with a random rotation of angle <= rot_deg_max and
/// a camera-center offset <= trans_frac_max * |center|; intrinsics untouched.
std::vector<Camera> perturb_cameras(const std::vector<Camera>& cameras, double rot_deg_max,
                                    double trans_frac_max, uint64_t seed);

// --- directory layout: cameras.json, cloud.json, meta.json, images/NNNN.png
//     (+ images/NNNN.f64 lossless dumps when enabled)

void save_cameras(const std::string& path, const std::vector<Camera>& cameras);
std::vector<Camera> load_cameras(const std::string& path);

void save_cloud(const std::string& path, const GaussianCloud& cloud);
GaussianCloud load_cloud(const std::string& path);

struct DatasetMeta {
    uint64_t seed = 0;
    std::string config_echo;  // serialized JSON of the generating config
};

void save_dataset(const std::string& dir, const Dataset& ds, const DatasetMeta& meta,
                  bool float_dumps = true);
Dataset load_dataset(const std::string& dir);

}  // namespace splatfit
