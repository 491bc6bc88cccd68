#pragma once

#include <cmath>

#include "splatfit/render.hpp"
#include "splatfit/rng.hpp"

namespace splatfit::testing {

inline Camera axis_camera(int w, int h, double fov_x = M_PI / 2, double fov_y = M_PI / 2) {
    Camera cam;
    cam.extrinsics.rotation = {1, 0, 0, 0};
    cam.extrinsics.translation = {0, 0, 0};
    cam.intrinsics = {fov_x, fov_y, w, h};
    return cam;
}

/// Gaussian with the given activated values (isotropic scale, DC-only color).
inline Gaussian make_gaussian(const Vec3& pos, double scale, double opacity, const Vec3& color) {
    Gaussian g;
    g.position_sph = cartesian_to_spherical(pos);
    const double raw = std::log(scale) - kScaleBias;
    g.scale_raw = {raw, raw, raw};
    g.rotation = {1, 0, 0, 0};
    g.opacity_raw = logit(opacity) - kOpacityBias;
    g.sh.assign(12, 0.0);
    g.sh[0] = color.x / kSh0;
    g.sh[1] = color.y / kSh0;
    g.sh[2] = color.z / kSh0;
    return g;
}

inline GaussianCloud single_gaussian_cloud(const Vec3& pos, double scale, double opacity,
                                           const Vec3& color) {
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    cloud.gaussians.push_back(make_gaussian(pos, scale, opacity, color));
    return cloud;
}

inline Image random_image(int w, int h, int c, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Image img(w, h, c);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

}  // namespace splatfit::testing
