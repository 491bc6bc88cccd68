#include "splatfit/geometry.hpp"

#include <algorithm>

namespace splatfit {

Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Mat3 quat_to_rotmat(const Quaternion& q_in) {
    const Quaternion q = q_in.normalized();
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r.m[0][0] = 1 - 2 * (y * y + z * z);
    r.m[0][1] = 2 * (x * y - w * z);
    r.m[0][2] = 2 * (x * z + w * y);
    r.m[1][0] = 2 * (x * y + w * z);
    r.m[1][1] = 1 - 2 * (x * x + z * z);
    r.m[1][2] = 2 * (y * z - w * x);
    r.m[2][0] = 2 * (x * z - w * y);
    r.m[2][1] = 2 * (y * z + w * x);
    r.m[2][2] = 1 - 2 * (x * x + y * y);
    return r;
}

Quaternion rotmat_to_quat(const Mat3& r) {
    const double trace = r.m[0][0] + r.m[1][1] + r.m[2][2];
    Quaternion q;
    if (trace > 0.0) {
        double s = std::sqrt(trace + 1.0) * 2.0;
        q.w = 0.25 * s;
        q.x = (r.m[2][1] - r.m[1][2]) / s;
        q.y = (r.m[0][2] - r.m[2][0]) / s;
        q.z = (r.m[1][0] - r.m[0][1]) / s;
    } else if (r.m[0][0] > r.m[1][1] && r.m[0][0] > r.m[2][2]) {
        double s = std::sqrt(1.0 + r.m[0][0] - r.m[1][1] - r.m[2][2]) * 2.0;
        q.w = (r.m[2][1] - r.m[1][2]) / s;
        q.x = 0.25 * s;
        q.y = (r.m[0][1] + r.m[1][0]) / s;
        q.z = (r.m[0][2] + r.m[2][0]) / s;
    } else if (r.m[1][1] > r.m[2][2]) {
        double s = std::sqrt(1.0 + r.m[1][1] - r.m[0][0] - r.m[2][2]) * 2.0;
        q.w = (r.m[0][2] - r.m[2][0]) / s;
        q.x = (r.m[0][1] + r.m[1][0]) / s;
        q.y = 0.25 * s;
        q.z = (r.m[1][2] + r.m[2][1]) / s;
    } else {
        double s = std::sqrt(1.0 + r.m[2][2] - r.m[0][0] - r.m[1][1]) * 2.0;
        q.w = (r.m[1][0] - r.m[0][1]) / s;
        q.x = (r.m[0][2] + r.m[2][0]) / s;
        q.y = (r.m[1][2] + r.m[2][1]) / s;
        q.z = 0.25 * s;
    }
    q = q.normalized();
    if (q.w < 0.0) q = -q;
    return q;
}

namespace {

// dR/dq_k at a unit quaternion, for the polynomial form used in quat_to_rotmat.
std::array<Mat3, 4> rotmat_quat_jacobian(const Quaternion& q) {
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    std::array<Mat3, 4> j;
    j[0].m[0][0] = 0;
    j[0].m[0][1] = -2 * z;
    j[0].m[0][2] = 2 * y;
    j[0].m[1][0] = 2 * z;
    j[0].m[1][1] = 0;
    j[0].m[1][2] = -2 * x;
    j[0].m[2][0] = -2 * y;
    j[0].m[2][1] = 2 * x;
    j[0].m[2][2] = 0;

    j[1].m[0][0] = 0;
    j[1].m[0][1] = 2 * y;
    j[1].m[0][2] = 2 * z;
    j[1].m[1][0] = 2 * y;
    j[1].m[1][1] = -4 * x;
    j[1].m[1][2] = -2 * w;
    j[1].m[2][0] = 2 * z;
    j[1].m[2][1] = 2 * w;
    j[1].m[2][2] = -4 * x;

    j[2].m[0][0] = -4 * y;
    j[2].m[0][1] = 2 * x;
    j[2].m[0][2] = 2 * w;
    j[2].m[1][0] = 2 * x;
    j[2].m[1][1] = 0;
    j[2].m[1][2] = 2 * z;
    j[2].m[2][0] = -2 * w;
    j[2].m[2][1] = 2 * z;
    j[2].m[2][2] = -4 * y;

    j[3].m[0][0] = -4 * z;
    j[3].m[0][1] = -2 * w;
    j[3].m[0][2] = 2 * x;
    j[3].m[1][0] = 2 * w;
    j[3].m[1][1] = -4 * z;
    j[3].m[1][2] = 2 * y;
    j[3].m[2][0] = 2 * x;
    j[3].m[2][1] = 2 * y;
    j[3].m[2][2] = 0;
    return j;
}

}  // namespace

std::array<double, 4> quat_to_rotmat_backward(const Quaternion& q_in, const Mat3& grad_r) {
    const double n = q_in.norm();
    const Quaternion q = q_in.normalized();
    const auto jac = rotmat_quat_jacobian(q);
    std::array<double, 4> g{};
    for (int k = 0; k < 4; ++k) g[k] = grad_r.frobenius_dot(jac[k]);
    // chain through the normalization: (I - qq^T)/|q|
    const std::array<double, 4> qa = q.as_array();
    double radial = 0.0;
    for (int k = 0; k < 4; ++k) radial += g[k] * qa[k];
    std::array<double, 4> out{};
    for (int k = 0; k < 4; ++k) out[k] = (g[k] - radial * qa[k]) / n;
    return out;
}

double quat_geodesic_angle(const Quaternion& a, const Quaternion& b) {
    double d = std::abs(a.normalized().dot(b.normalized()));
    return 2.0 * std::acos(std::min(1.0, d));
}

Vec3 spherical_to_cartesian(const Spherical& s) {
    const double sp = std::sin(s.phi), cp = std::cos(s.phi);
    return {s.r * sp * std::cos(s.theta), s.r * sp * std::sin(s.theta), s.r * cp};
}

Spherical cartesian_to_spherical(const Vec3& v) {
    const double r = v.norm();
    if (r == 0.0) return {0.0, 0.0, 0.0};
    double phi = std::acos(std::clamp(v.z / r, -1.0, 1.0));
    double theta = std::atan2(v.y, v.x);
    return {r, theta, phi};
}

Mat3 spherical_jacobian(const Spherical& s) {
    const double st = std::sin(s.theta), ct = std::cos(s.theta);
    const double sp = std::sin(s.phi), cp = std::cos(s.phi);
    Mat3 j;
    j.m[0][0] = sp * ct;
    j.m[1][0] = sp * st;
    j.m[2][0] = cp;
    j.m[0][1] = -s.r * sp * st;
    j.m[1][1] = s.r * sp * ct;
    j.m[2][1] = 0.0;
    j.m[0][2] = s.r * cp * ct;
    j.m[1][2] = s.r * cp * st;
    j.m[2][2] = -s.r * sp;
    return j;
}

BBox3 compute_bbox(std::span<const Vec3> positions) {
    if (positions.empty()) throw std::invalid_argument("compute_bbox: empty position list");
    Vec3 lo = positions[0], hi = positions[0];
    for (const Vec3& p : positions) {
        lo.x = std::min(lo.x, p.x);
        lo.y = std::min(lo.y, p.y);
        lo.z = std::min(lo.z, p.z);
        hi.x = std::max(hi.x, p.x);
        hi.y = std::max(hi.y, p.y);
        hi.z = std::max(hi.z, p.z);
    }
    return {hi - lo};
}

CameraExtrinsics look_at_extrinsics(const Vec3& position, const Vec3& direction) {
    const Vec3 forward = direction.normalized();
    Vec3 up{0, 0, 1};
    if (std::abs(forward.dot(up)) > 1.0 - 1e-9) up = Vec3{1, 0, 0};
    // +y down in camera frame, right-handed basis (x = y cross z)
    const Vec3 down = (-up + forward * up.dot(forward)).normalized();
    const Vec3 right = down.cross(forward).normalized();
    Mat3 r;
    r.m[0][0] = right.x;
    r.m[0][1] = right.y;
    r.m[0][2] = right.z;
    r.m[1][0] = down.x;
    r.m[1][1] = down.y;
    r.m[1][2] = down.z;
    r.m[2][0] = forward.x;
    r.m[2][1] = forward.y;
    r.m[2][2] = forward.z;
    CameraExtrinsics ext;
    ext.rotation = rotmat_to_quat(r);
    // rebuild the row basis from the quaternion so t matches exactly
    ext.translation = -quat_to_rotmat(ext.rotation).mul(position);
    return ext;
}

std::optional<ProjectedSplat> project_gaussian(const Vec3& mean, const Mat3& cov3d,
                                               const Camera& cam) {
    const Mat3 w = cam.extrinsics.rotmat();
    const Vec3 xc = w.mul(mean) + cam.extrinsics.translation;
    if (xc.z <= kNearPlane) return std::nullopt;

    const double fx = cam.intrinsics.focal_x();
    const double fy = cam.intrinsics.focal_y();
    const double inv_z = 1.0 / xc.z;

    ProjectedSplat out;
    out.mean2d = {fx * xc.x * inv_z + cam.intrinsics.width * 0.5,
                  fy * xc.y * inv_z + cam.intrinsics.height * 0.5};
    out.depth = xc.z;

    // J rows: d(mean2d)/d(xc)
    const double j00 = fx * inv_z, j02 = -fx * xc.x * inv_z * inv_z;
    const double j11 = fy * inv_z, j12 = -fy * xc.y * inv_z * inv_z;

    const Mat3 v = w * cov3d * w.transpose();
    // sigma2 = J V J^T
    const double r0[3] = {j00, 0.0, j02};
    const double r1[3] = {0.0, j11, j12};
    auto quad = [&v](const double* p, const double* q) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) s += p[i] * v.m[i][j] * q[j];
        return s;
    };
    const double sxx = quad(r0, r0) + kCov2dLowPass;
    const double sxy = quad(r0, r1);
    const double syy = quad(r1, r1) + kCov2dLowPass;
    out.cov2d = {sxx, sxy, sxy, syy};
    return out;
}

Vec3 sh_eval(std::span<const double> coeffs, int degree, const Vec3& view_dir,
             std::array<uint8_t, 3>* clamp_mask) {
    if (degree != 0 && degree != 1) throw std::invalid_argument("sh_eval: degree must be 0 or 1");
    double basis[4] = {kSh0, 0, 0, 0};
    int n = 1;
    if (degree == 1) {
        basis[1] = -kSh1 * view_dir.y;
        basis[2] = kSh1 * view_dir.z;
        basis[3] = -kSh1 * view_dir.x;
        n = 4;
    }
    Vec3 rgb;
    double out[3] = {0, 0, 0};
    for (int k = 0; k < n; ++k)
        for (int ch = 0; ch < 3; ++ch) out[ch] += basis[k] * coeffs[3 * k + ch];
    for (int ch = 0; ch < 3; ++ch) {
        uint8_t mask = 0;
        if (out[ch] < 0.0) {
            out[ch] = 0.0;
            mask |= 1;
        } else if (out[ch] > 1.0) {
            out[ch] = 1.0;
            mask |= 2;
        }
        if (clamp_mask) (*clamp_mask)[ch] = mask;
    }
    rgb = {out[0], out[1], out[2]};
    return rgb;
}

std::vector<double> positional_encoding(double x, int channels) {
    if (channels <= 0 || channels % 2 != 0)
        throw std::invalid_argument("positional_encoding: channel count must be positive and even");
    const int half = channels / 2;
    std::vector<double> out(static_cast<size_t>(channels));
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        out[2 * i] = std::sin(x * freq);
        out[2 * i + 1] = std::cos(x * freq);
    }
    return out;
}

}  // namespace splatfit
