#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "splatfit/geometry.hpp"
#include "splatfit/image.hpp"

namespace splatfit {

inline constexpr double kOpacityBias = -2.1972245773362196;  // logit(0.1)
inline constexpr double kScaleBias = -3.912023005428146;     // ln(0.02)

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One splat; position, scale and opacity are stored pre-activation.
struct Gaussian {
    Spherical position_sph;
    Vec3 scale_raw;
    Quaternion rotation;
    double opacity_raw = 0.0;
    std::vector<double> sh;  // coefficient-major, 3 channels per coefficient

    Vec3 position() const { return spherical_to_cartesian(position_sph); }
    Vec3 scale() const {
        return {std::exp(scale_raw.x + kScaleBias), std::exp(scale_raw.y + kScaleBias),
                std::exp(scale_raw.z + kScaleBias)};
    }
    double opacity() const { return sigmoid(opacity_raw + kOpacityBias); }
    Mat3 covariance() const {
        const Mat3 r = quat_to_rotmat(rotation);
        const Mat3 m = r * Mat3::diag(scale());
        return m * m.transpose();
    }
};

struct GaussianCloud {
    std::vector<Gaussian> gaussians;
    int sh_degree = 1;
    std::optional<BBox3> metric_extent;  // real-world size, meters

    size_t size() const { return gaussians.size(); }
    int sh_dim() const { return sh_coeff_count(sh_degree); }
    std::vector<Vec3> positions() const {
        std::vector<Vec3> p;
        p.reserve(gaussians.size());
        for (const auto& g : gaussians) p.push_back(g.position());
        return p;
    }
};

struct RenderOptions {
    Vec3 background{1.0, 1.0, 1.0};
    double transmittance_floor = 1e-4;
    double footprint_sigma = 3.0;
    bool deterministic = true;  // fast mode shares the same bit-exact path
    int threads = 1;
};

/// Per-visible-Gaussian projection record kept for the backward pass.
struct ProjectedRecord {
    uint32_t index = 0;  // index into the cloud
    Vec3 cam_pos;        // camera-space position
    Vec2 mean2d;
    Mat2 cov2d;
    Mat2 cov2d_inv;
    double depth = 0.0;
    double radius = 0.0;  // footprint_sigma * sqrt(max eigenvalue)
    double alpha = 0.0;   // activated opacity
    Vec3 color;           // SH-evaluated, clamped
    Vec3 view_dir;
    std::array<uint8_t, 3> clamp_mask{0, 0, 0};
};

struct RenderOutput {
    int width = 0, height = 0;
    Image rgb;    // H x W x 3
    Image alpha;  // H x W x 1
    Vec3 background;
    double footprint_sigma = 3.0;
    double transmittance_floor = 1e-4;

    std::vector<ProjectedRecord> visible;  // ascending depth
    // per-pixel contributor lists in compositing order (CSR layout)
    std::vector<uint32_t> contrib_offsets;  // size H*W+1
    std::vector<uint32_t> contrib_index;    // indices into `visible`
    std::vector<double> contrib_alpha;      // alpha-hat values as composited
    std::vector<double> final_transmittance;

    /// Order-sensitive digest of (pixel, Gaussian id) contributions plus SH
    /// clamp states; two renders with equal hashes used identical contributor
    /// sets.
    uint64_t contributor_hash() const;
};

/// Projects, culls (near plane and frustum with footprint margin) and sorts by
/// ascending camera depth; ties keep the original cloud order.
std::vector<ProjectedRecord> depth_sort_cull(const GaussianCloud& cloud, const Camera& cam,
                                             const RenderOptions& opts = {});

/// Front-to-back alpha compositing over the sorted visible list. Footprints
/// are truncated at footprint_sigma in Mahalanobis distance; accumulation for
/// a pixel stops once its transmittance falls below transmittance_floor.
RenderOutput rasterize(const GaussianCloud& cloud, const Camera& cam,
                       const RenderOptions& opts = {});

}  // namespace splatfit
