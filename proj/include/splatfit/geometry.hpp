#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace splatfit {

struct Vec2 {
    double x = 0.0, y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    Vec3 normalized() const {
        double n = norm();
        return n > 0.0 ? Vec3{x / n, y / n, z / n} : Vec3{0, 0, 0};
    }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// Symmetric 2x2 matrix stored as full entries.
struct Mat2 {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;  // [[a,b],[c,d]]

    static Mat2 identity() { return {1, 0, 0, 1}; }
    Mat2 operator+(const Mat2& o) const { return {a + o.a, b + o.b, c + o.c, d + o.d}; }
    Mat2 operator*(double s) const { return {a * s, b * s, c * s, d * s}; }
    Vec2 mul(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
    double det() const { return a * d - b * c; }
    Mat2 inverse() const {
        double dt = det();
        return {d / dt, -b / dt, -c / dt, a / dt};
    }
    // eigenvalues of a symmetric matrix, descending
    std::array<double, 2> sym_eigenvalues() const {
        double mid = 0.5 * (a + d);
        double disc = std::sqrt(std::max(0.0, mid * mid - det()));
        return {mid + disc, mid - disc};
    }
};

struct Mat3 {
    double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};

    static Mat3 identity() {
        Mat3 r;
        r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
        return r;
    }
    static Mat3 diag(const Vec3& v) {
        Mat3 r;
        r.m[0][0] = v.x;
        r.m[1][1] = v.y;
        r.m[2][2] = v.z;
        return r;
    }
    static Mat3 outer(const Vec3& u, const Vec3& v) {
        Mat3 r;
        const double uu[3] = {u.x, u.y, u.z};
        const double vv[3] = {v.x, v.y, v.z};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = uu[i] * vv[j];
        return r;
    }
    Mat3 transpose() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
                r.m[i][j] = s;
            }
        return r;
    }
    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] + o.m[i][j];
        return r;
    }
    Mat3& operator+=(const Mat3& o) {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) m[i][j] += o.m[i][j];
        return *this;
    }
    Mat3 operator*(double s) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[i][j] * s;
        return r;
    }
    Vec3 mul(const Vec3& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }
    Vec3 mul_transposed(const Vec3& v) const {
        return {m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
                m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
                m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z};
    }
    double frobenius_dot(const Mat3& o) const {
        double s = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) s += m[i][j] * o.m[i][j];
        return s;
    }
};

struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quaternion normalized() const {
        double n = norm();
        if (n == 0.0) return {1, 0, 0, 0};
        return {w / n, x / n, y / n, z / n};
    }
    double dot(const Quaternion& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
    Quaternion operator-() const { return {-w, -x, -y, -z}; }
    std::array<double, 4> as_array() const { return {w, x, y, z}; }
};

/// Composition r = a * b (apply b first, then a).
Quaternion quat_multiply(const Quaternion& a, const Quaternion& b);

/// Rotation matrix of q; non-unit input is normalized first. R(q) == R(-q).
Mat3 quat_to_rotmat(const Quaternion& q);

/// Inverse of quat_to_rotmat for proper rotations; returns a unit quaternion with w >= 0.
Quaternion rotmat_to_quat(const Mat3& r);

/// Pullback of a matrix cotangent through q -> R(q/|q|).
/// The returned 4-vector lies in the tangent space of the unit sphere at q/|q|.
std::array<double, 4> quat_to_rotmat_backward(const Quaternion& q, const Mat3& grad_r);

/// Angular distance between two rotations, 2*acos(|q1 . q2|), in radians.
double quat_geodesic_angle(const Quaternion& a, const Quaternion& b);

/// r >= 0, theta = azimuth, phi = elevation from the +z axis in [0, pi].
struct Spherical {
    double r = 0.0, theta = 0.0, phi = 0.0;
};

Vec3 spherical_to_cartesian(const Spherical& s);

/// Inverse of spherical_to_cartesian; the origin maps to (0, 0, 0).
Spherical cartesian_to_spherical(const Vec3& v);

/// Columns are d(position)/d(r, theta, phi).
Mat3 spherical_jacobian(const Spherical& s);

struct BBox3 {
    Vec3 extent;  // size along the three axes
};

/// Per-axis (max - min) over the positions; rejects an empty list.
BBox3 compute_bbox(std::span<const Vec3> positions);

struct CameraIntrinsics {
    double fov_x = 0.0, fov_y = 0.0;  // radians
    int width = 0, height = 0;

    double focal_x() const { return (width * 0.5) / std::tan(fov_x * 0.5); }
    double focal_y() const { return (height * 0.5) / std::tan(fov_y * 0.5); }
};

/// World-to-camera: x_cam = R(q) * x_world + t.
struct CameraExtrinsics {
    Quaternion rotation;  // unit
    Vec3 translation;

    Mat3 rotmat() const { return quat_to_rotmat(rotation); }
    Vec3 center() const { return -rotmat().mul_transposed(translation); }
};

struct Camera {
    CameraExtrinsics extrinsics;
    CameraIntrinsics intrinsics;
};

/// Camera frame: +z forward, +y down, image origin top-left, principal point at
/// the image center. Roll is fixed by a +z-up world convention; straight-down
/// views fall back to +x as the up reference.
CameraExtrinsics look_at_extrinsics(const Vec3& position, const Vec3& direction);

struct ProjectedSplat {
    Vec2 mean2d;   // pixel coordinates
    Mat2 cov2d;    // includes the +0.3 px^2 low-pass on the diagonal
    double depth;  // camera-space z
};

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCov2dLowPass = 0.3;

/// EWA projection of one Gaussian. Returns nullopt when the mean is behind the
/// near plane (culled, not an error).
std::optional<ProjectedSplat> project_gaussian(const Vec3& mean, const Mat3& cov3d,
                                               const Camera& cam);

inline constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

inline constexpr double kSh0 = 0.28209479177387814;
inline constexpr double kSh1 = 0.4886025119029199;

/// View-dependent color from per-channel SH coefficients (coefficient-major,
/// 3 channels per coefficient), clamped to [0,1] after evaluation. Degree 0
/// ignores the view direction. If clamp_mask is given, bit 0 marks a low clamp
/// and bit 1 a high clamp per channel.
Vec3 sh_eval(std::span<const double> coeffs, int degree, const Vec3& view_dir,
             std::array<uint8_t, 3>* clamp_mask = nullptr);

/// Sinusoidal encoding [sin(x*f_i), cos(x*f_i)] with f_i = 10000^(-i/(C/2)),
/// i = 0..C/2-1. Rejects odd C.
std::vector<double> positional_encoding(double x, int channels);

}  // namespace splatfit
