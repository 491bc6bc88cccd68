#include "splatfit/grad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

namespace splatfit {

GradientSet GradientSet::zeros(const GaussianCloud& cloud) {
    GradientSet g;
    g.gaussians.resize(cloud.size());
    const size_t sh_len = static_cast<size_t>(cloud.sh_dim()) * 3;
    for (auto& gg : g.gaussians) gg.sh.assign(sh_len, 0.0);
    return g;
}

void GradientSet::accumulate(const GradientSet& o, double weight) {
    for (size_t i = 0; i < gaussians.size(); ++i) {
        GaussianGrad& a = gaussians[i];
        const GaussianGrad& b = o.gaussians[i];
        for (int k = 0; k < 3; ++k) a.position_sph[k] += weight * b.position_sph[k];
        a.scale_raw += b.scale_raw * weight;
        for (int k = 0; k < 4; ++k) a.rotation[k] += weight * b.rotation[k];
        a.opacity_raw += weight * b.opacity_raw;
        for (size_t k = 0; k < a.sh.size(); ++k) a.sh[k] += weight * b.sh[k];
    }
    for (int k = 0; k < 4; ++k) camera.rotation[k] += weight * o.camera.rotation[k];
    camera.translation += o.camera.translation * weight;
    camera.fov[0] += weight * o.camera.fov[0];
    camera.fov[1] += weight * o.camera.fov[1];
}

bool GradientSet::finite() const {
    auto ok = [](double v) { return std::isfinite(v); };
    for (const auto& g : gaussians) {
        for (double v : g.position_sph)
            if (!ok(v)) return false;
        if (!g.scale_raw.finite()) return false;
        for (double v : g.rotation)
            if (!ok(v)) return false;
        if (!ok(g.opacity_raw)) return false;
        for (double v : g.sh)
            if (!ok(v)) return false;
    }
    for (double v : camera.rotation)
        if (!ok(v)) return false;
    if (!camera.translation.finite()) return false;
    return ok(camera.fov[0]) && ok(camera.fov[1]);
}

double GradientSet::max_abs() const {
    double m = 0.0;
    auto upd = [&m](double v) { m = std::max(m, std::abs(v)); };
    for (const auto& g : gaussians) {
        for (double v : g.position_sph) upd(v);
        upd(g.scale_raw.x);
        upd(g.scale_raw.y);
        upd(g.scale_raw.z);
        for (double v : g.rotation) upd(v);
        upd(g.opacity_raw);
        for (double v : g.sh) upd(v);
    }
    for (double v : camera.rotation) upd(v);
    upd(camera.translation.x);
    upd(camera.translation.y);
    upd(camera.translation.z);
    upd(camera.fov[0]);
    upd(camera.fov[1]);
    return m;
}

namespace {

struct RecordAccum {
    Vec3 color;
    double alpha = 0.0;
    Vec2 mean2d;
    double axx = 0.0, axy = 0.0, ayy = 0.0;  // grad w.r.t. cov2d_inv
};

struct CamAccum {
    Mat3 rot;   // grad w.r.t. the world-to-camera rotation matrix
    Vec3 t;     // grad w.r.t. translation
    double fx = 0.0, fy = 0.0;

    void add(const CamAccum& o) {
        rot += o.rot;
        t += o.t;
        fx += o.fx;
        fy += o.fy;
    }
};

void backward_rows(const RenderOutput& out, const Image& loss_grad, const BackwardOptions& bopts,
                   int y_begin, int y_end, std::vector<RecordAccum>& acc) {
    const int width = out.width;
    std::vector<double> trans;  // per-contribution entry transmittance
    for (int y = y_begin; y < y_end; ++y) {
        for (int x = 0; x < width; ++x) {
            const size_t px = static_cast<size_t>(y) * width + x;
            const uint32_t begin = out.contrib_offsets[px], end = out.contrib_offsets[px + 1];
            if (begin == end) continue;
            const Vec3 g{loss_grad.at(y, x, 0), loss_grad.at(y, x, 1), loss_grad.at(y, x, 2)};
            if (g.x == 0.0 && g.y == 0.0 && g.z == 0.0) continue;

            trans.clear();
            double t = 1.0;
            for (uint32_t k = begin; k < end; ++k) {
                trans.push_back(t);
                t *= 1.0 - out.contrib_alpha[k];
            }
            const Vec2 pixel{x + 0.5, y + 0.5};
            Vec3 suffix = out.background * out.final_transmittance[px];
            for (uint32_t k = end; k-- > begin;) {
                const uint32_t v = out.contrib_index[k];
                const ProjectedRecord& rec = out.visible[v];
                const double alpha_hat = out.contrib_alpha[k];
                const double t_in = trans[k - begin];
                const double w = alpha_hat * t_in;
                RecordAccum& a = acc[v];

                a.color += g * w;
                const double g_alpha_hat = g.x * (rec.color.x * t_in - suffix.x / (1.0 - alpha_hat)) +
                                           g.y * (rec.color.y * t_in - suffix.y / (1.0 - alpha_hat)) +
                                           g.z * (rec.color.z * t_in - suffix.z / (1.0 - alpha_hat));

                const Vec2 d = pixel - rec.mean2d;
                const Vec2 ad = rec.cov2d_inv.mul(d);
                const double maha = d.dot(ad);
                a.alpha += g_alpha_hat * std::exp(-0.5 * maha);
                const double g_maha = g_alpha_hat * (-0.5 * alpha_hat);
                if (bopts.mean_path) a.mean2d = a.mean2d + ad * (-2.0 * g_maha);
                if (bopts.cov_path) {
                    a.axx += g_maha * d.x * d.x;
                    a.axy += g_maha * d.x * d.y;
                    a.ayy += g_maha * d.y * d.y;
                }
                suffix += rec.color * w;
            }
        }
    }
}

}  // namespace

GradientSet backward_render(const GaussianCloud& cloud, const Camera& cam, const RenderOutput& out,
                            const Image& loss_grad_rgb, const BackwardOptions& bopts) {
    if (out.width != cam.intrinsics.width || out.height != cam.intrinsics.height ||
        loss_grad_rgb.width != out.width || loss_grad_rgb.height != out.height ||
        loss_grad_rgb.channels != 3)
        throw std::invalid_argument("backward_render: shape mismatch");
    for (const auto& rec : out.visible)
        if (rec.index >= cloud.size())
            throw std::invalid_argument("backward_render: aux buffers do not match the cloud");

    GradientSet grads = GradientSet::zeros(cloud);

    // pixel scatter into per-visible accumulators
    const int threads = std::max(1, bopts.threads);
    std::vector<std::vector<RecordAccum>> acc(threads);
    std::vector<std::array<int, 2>> ranges;
    const int rows_per = (out.height + threads - 1) / threads;
    for (int tidx = 0; tidx < threads; ++tidx) {
        const int y0 = tidx * rows_per, y1 = std::min(out.height, y0 + rows_per);
        if (y0 >= y1) break;
        ranges.push_back({y0, y1});
    }
    for (size_t tidx = 0; tidx < ranges.size(); ++tidx) acc[tidx].resize(out.visible.size());

    if (ranges.size() == 1) {
        backward_rows(out, loss_grad_rgb, bopts, ranges[0][0], ranges[0][1], acc[0]);
    } else {
        std::vector<std::thread> pool;
        for (size_t tidx = 0; tidx < ranges.size(); ++tidx)
            pool.emplace_back(backward_rows, std::cref(out), std::cref(loss_grad_rgb),
                              std::cref(bopts), ranges[tidx][0], ranges[tidx][1],
                              std::ref(acc[tidx]));
        for (auto& th : pool) th.join();
    }
    for (size_t tidx = 1; tidx < ranges.size(); ++tidx)
        for (size_t v = 0; v < out.visible.size(); ++v) {
            acc[0][v].color += acc[tidx][v].color;
            acc[0][v].alpha += acc[tidx][v].alpha;
            acc[0][v].mean2d = acc[0][v].mean2d + acc[tidx][v].mean2d;
            acc[0][v].axx += acc[tidx][v].axx;
            acc[0][v].axy += acc[tidx][v].axy;
            acc[0][v].ayy += acc[tidx][v].ayy;
        }

    // chain each visible record into raw Gaussian and camera parameters
    const Mat3 w_rot = cam.extrinsics.rotmat();
    const Vec3 cam_center = cam.extrinsics.center();
    const double fx = cam.intrinsics.focal_x(), fy = cam.intrinsics.focal_y();
    CamAccum cam_total;

    for (size_t v = 0; v < out.visible.size(); ++v) {
        const ProjectedRecord& rec = out.visible[v];
        const RecordAccum& a = acc[0][v];
        const Gaussian& gsn = cloud.gaussians[rec.index];
        GaussianGrad& gg = grads.gaussians[rec.index];

        // grad w.r.t. cov2d from grad w.r.t. its inverse
        const Mat2 ga{a.axx, a.axy, a.axy, a.ayy};
        const Mat2 ai = rec.cov2d_inv;
        const Mat2 t1{ai.a * ga.a + ai.b * ga.c, ai.a * ga.b + ai.b * ga.d,
                      ai.c * ga.a + ai.d * ga.c, ai.c * ga.b + ai.d * ga.d};
        const Mat2 g_cov2d{-(t1.a * ai.a + t1.b * ai.c), -(t1.a * ai.b + t1.b * ai.d),
                           -(t1.c * ai.a + t1.d * ai.c), -(t1.c * ai.b + t1.d * ai.d)};

        const Vec3 xc = rec.cam_pos;
        const double inv_z = 1.0 / xc.z;
        const double j00 = fx * inv_z, j02 = -fx * xc.x * inv_z * inv_z;
        const double j11 = fy * inv_z, j12 = -fy * xc.y * inv_z * inv_z;

        const Mat3 cov3 = gsn.covariance();
        // M = J * W (2x3), rows m0, m1
        Vec3 m0{j00 * w_rot.m[0][0] + j02 * w_rot.m[2][0], j00 * w_rot.m[0][1] + j02 * w_rot.m[2][1],
                j00 * w_rot.m[0][2] + j02 * w_rot.m[2][2]};
        Vec3 m1{j11 * w_rot.m[1][0] + j12 * w_rot.m[2][0], j11 * w_rot.m[1][1] + j12 * w_rot.m[2][1],
                j11 * w_rot.m[1][2] + j12 * w_rot.m[2][2]};
        // gM = 2 * g_cov2d * M * cov3
        const Vec3 c_m0 = cov3.mul(m0), c_m1 = cov3.mul(m1);  // cov3 symmetric
        const Vec3 gm0 = (c_m0 * g_cov2d.a + c_m1 * g_cov2d.b) * 2.0;
        const Vec3 gm1 = (c_m0 * g_cov2d.c + c_m1 * g_cov2d.d) * 2.0;
        // g_cov3 = M^T g_cov2d M
        Mat3 g_cov3 = Mat3::outer(m0, m0 * g_cov2d.a + m1 * g_cov2d.b) +
                      Mat3::outer(m1, m0 * g_cov2d.c + m1 * g_cov2d.d);
        // gJ = gM * W^T ; gW = J^T gM
        const Vec3 gj0 = {gm0.dot({w_rot.m[0][0], w_rot.m[0][1], w_rot.m[0][2]}),
                          gm0.dot({w_rot.m[1][0], w_rot.m[1][1], w_rot.m[1][2]}),
                          gm0.dot({w_rot.m[2][0], w_rot.m[2][1], w_rot.m[2][2]})};
        const Vec3 gj1 = {gm1.dot({w_rot.m[0][0], w_rot.m[0][1], w_rot.m[0][2]}),
                          gm1.dot({w_rot.m[1][0], w_rot.m[1][1], w_rot.m[1][2]}),
                          gm1.dot({w_rot.m[2][0], w_rot.m[2][1], w_rot.m[2][2]})};
        Mat3 g_w;  // J^T gM
        for (int c = 0; c < 3; ++c) {
            const double gm0c = c == 0 ? gm0.x : c == 1 ? gm0.y : gm0.z;
            const double gm1c = c == 0 ? gm1.x : c == 1 ? gm1.y : gm1.z;
            g_w.m[0][c] = j00 * gm0c;
            g_w.m[1][c] = j11 * gm1c;
            g_w.m[2][c] = j02 * gm0c + j12 * gm1c;
        }

        const double gj00 = gj0.x, gj02 = gj0.z, gj11 = gj1.y, gj12 = gj1.z;

        double g_fx = gj00 * inv_z + gj02 * (-xc.x * inv_z * inv_z);
        double g_fy = gj11 * inv_z + gj12 * (-xc.y * inv_z * inv_z);
        Vec3 g_xc{gj02 * (-fx * inv_z * inv_z), gj12 * (-fy * inv_z * inv_z),
                  gj00 * (-fx * inv_z * inv_z) + gj11 * (-fy * inv_z * inv_z) +
                      gj02 * (2.0 * fx * xc.x * inv_z * inv_z * inv_z) +
                      gj12 * (2.0 * fy * xc.y * inv_z * inv_z * inv_z)};
        // mean path: mean2d = (fx x/z + W/2, fy y/z + H/2)
        g_fx += a.mean2d.x * xc.x * inv_z;
        g_fy += a.mean2d.y * xc.y * inv_z;
        g_xc.x += a.mean2d.x * fx * inv_z;
        g_xc.y += a.mean2d.y * fy * inv_z;
        g_xc.z += -a.mean2d.x * fx * xc.x * inv_z * inv_z - a.mean2d.y * fy * xc.y * inv_z * inv_z;

        const Vec3 p_world = gsn.position();
        Vec3 g_p = w_rot.mul_transposed(g_xc);
        cam_total.t += g_xc;
        cam_total.rot += Mat3::outer(g_xc, p_world);
        cam_total.rot += g_w;
        cam_total.fx += g_fx;
        cam_total.fy += g_fy;

        // SH color: coefficients, and view direction when degree > 0
        double basis[4] = {kSh0, -kSh1 * rec.view_dir.y, kSh1 * rec.view_dir.z,
                           -kSh1 * rec.view_dir.x};
        const int n_coeff = cloud.sh_dim();
        Vec3 g_view;
        const double gc[3] = {rec.clamp_mask[0] ? 0.0 : a.color.x,
                              rec.clamp_mask[1] ? 0.0 : a.color.y,
                              rec.clamp_mask[2] ? 0.0 : a.color.z};
        for (int k = 0; k < n_coeff; ++k)
            for (int ch = 0; ch < 3; ++ch) gg.sh[3 * k + ch] += basis[k] * gc[ch];
        if (cloud.sh_degree >= 1) {
            for (int ch = 0; ch < 3; ++ch) {
                g_view.x += -kSh1 * gsn.sh[3 * 3 + ch] * gc[ch];
                g_view.y += -kSh1 * gsn.sh[3 * 1 + ch] * gc[ch];
                g_view.z += kSh1 * gsn.sh[3 * 2 + ch] * gc[ch];
            }
            if (bopts.mean_path && (g_view.x != 0.0 || g_view.y != 0.0 || g_view.z != 0.0)) {
                const Vec3 u = p_world - cam_center;
                const double u_norm = u.norm();
                const Vec3 g_u = (g_view - rec.view_dir * rec.view_dir.dot(g_view)) / u_norm;
                g_p += g_u;
                const Vec3 g_center = -g_u;
                cam_total.t += -(w_rot.mul(g_center));
                cam_total.rot += Mat3::outer(-cam.extrinsics.translation, g_center);
            }
        }

        // opacity through the sigmoid
        gg.opacity_raw += a.alpha * rec.alpha * (1.0 - rec.alpha);

        // covariance into rotation and scale
        const Mat3 r_g = quat_to_rotmat(gsn.rotation);
        const Vec3 s = gsn.scale();
        const Mat3 m3 = r_g * Mat3::diag(s);
        const Mat3 g_m3 = (g_cov3 + g_cov3.transpose()) * m3;
        Mat3 g_rg;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) g_rg.m[i][j] = g_m3.m[i][j] * s[j];
        const auto g_quat = quat_to_rotmat_backward(gsn.rotation, g_rg);
        for (int k = 0; k < 4; ++k) gg.rotation[k] += g_quat[k];
        for (int j = 0; j < 3; ++j) {
            double gs = 0.0;
            for (int i = 0; i < 3; ++i) gs += r_g.m[i][j] * g_m3.m[i][j];
            const double sj = j == 0 ? s.x : j == 1 ? s.y : s.z;
            if (j == 0)
                gg.scale_raw.x += gs * sj;
            else if (j == 1)
                gg.scale_raw.y += gs * sj;
            else
                gg.scale_raw.z += gs * sj;
        }

        // position into spherical coordinates
        const Vec3 g_sph = spherical_jacobian(gsn.position_sph).mul_transposed(g_p);
        gg.position_sph[0] += g_sph.x;
        gg.position_sph[1] += g_sph.y;
        gg.position_sph[2] += g_sph.z;
    }

    grads.camera.rotation = quat_to_rotmat_backward(cam.extrinsics.rotation, cam_total.rot);
    grads.camera.translation = cam_total.t;
    const double half_x = cam.intrinsics.fov_x * 0.5, half_y = cam.intrinsics.fov_y * 0.5;
    grads.camera.fov[0] =
        cam_total.fx * (-(cam.intrinsics.width * 0.25) / (std::sin(half_x) * std::sin(half_x)));
    grads.camera.fov[1] =
        cam_total.fy * (-(cam.intrinsics.height * 0.25) / (std::sin(half_y) * std::sin(half_y)));
    return grads;
}

std::string ParamRef::class_name() const {
    switch (cls) {
        case Class::kPosR: return "position_r";
        case Class::kPosTheta: return "position_theta";
        case Class::kPosPhi: return "position_phi";
        case Class::kScaleRaw: return "scale_raw";
        case Class::kRotation: return "rotation";
        case Class::kOpacityRaw: return "opacity_raw";
        case Class::kSh: return "sh";
        case Class::kCamRotation: return "cam_rotation";
        case Class::kCamTranslation: return "cam_translation";
        case Class::kCamFov: return "cam_fov";
    }
    return "?";
}

std::vector<ParamRef> enumerate_params(const GaussianCloud& cloud, bool include_camera) {
    std::vector<ParamRef> refs;
    const int sh_len = cloud.sh_dim() * 3;
    for (int i = 0; i < static_cast<int>(cloud.size()); ++i) {
        refs.push_back({ParamRef::Class::kPosR, i, 0});
        refs.push_back({ParamRef::Class::kPosTheta, i, 0});
        refs.push_back({ParamRef::Class::kPosPhi, i, 0});
        for (int c = 0; c < 3; ++c) refs.push_back({ParamRef::Class::kScaleRaw, i, c});
        for (int c = 0; c < 4; ++c) refs.push_back({ParamRef::Class::kRotation, i, c});
        refs.push_back({ParamRef::Class::kOpacityRaw, i, 0});
        for (int c = 0; c < sh_len; ++c) refs.push_back({ParamRef::Class::kSh, i, c});
    }
    if (include_camera) {
        for (int c = 0; c < 4; ++c) refs.push_back({ParamRef::Class::kCamRotation, 0, c});
        for (int c = 0; c < 3; ++c) refs.push_back({ParamRef::Class::kCamTranslation, 0, c});
        for (int c = 0; c < 2; ++c) refs.push_back({ParamRef::Class::kCamFov, 0, c});
    }
    return refs;
}

namespace {

double* param_slot(GaussianCloud& cloud, Camera& cam, const ParamRef& ref) {
    switch (ref.cls) {
        case ParamRef::Class::kPosR: return &cloud.gaussians[ref.object].position_sph.r;
        case ParamRef::Class::kPosTheta: return &cloud.gaussians[ref.object].position_sph.theta;
        case ParamRef::Class::kPosPhi: return &cloud.gaussians[ref.object].position_sph.phi;
        case ParamRef::Class::kScaleRaw: {
            Vec3& s = cloud.gaussians[ref.object].scale_raw;
            return ref.comp == 0 ? &s.x : ref.comp == 1 ? &s.y : &s.z;
        }
        case ParamRef::Class::kRotation: {
            Quaternion& q = cloud.gaussians[ref.object].rotation;
            return ref.comp == 0 ? &q.w : ref.comp == 1 ? &q.x : ref.comp == 2 ? &q.y : &q.z;
        }
        case ParamRef::Class::kOpacityRaw: return &cloud.gaussians[ref.object].opacity_raw;
        case ParamRef::Class::kSh: return &cloud.gaussians[ref.object].sh[ref.comp];
        case ParamRef::Class::kCamRotation: {
            Quaternion& q = cam.extrinsics.rotation;
            return ref.comp == 0 ? &q.w : ref.comp == 1 ? &q.x : ref.comp == 2 ? &q.y : &q.z;
        }
        case ParamRef::Class::kCamTranslation: {
            Vec3& t = cam.extrinsics.translation;
            return ref.comp == 0 ? &t.x : ref.comp == 1 ? &t.y : &t.z;
        }
        case ParamRef::Class::kCamFov:
            return ref.comp == 0 ? &cam.intrinsics.fov_x : &cam.intrinsics.fov_y;
    }
    return nullptr;
}

}  // namespace

double get_param(const GaussianCloud& cloud, const Camera& cam, const ParamRef& ref) {
    return *param_slot(const_cast<GaussianCloud&>(cloud), const_cast<Camera&>(cam), ref);
}

void set_param(GaussianCloud& cloud, Camera& cam, const ParamRef& ref, double value) {
    *param_slot(cloud, cam, ref) = value;
}

double get_grad(const GradientSet& g, const ParamRef& ref) {
    switch (ref.cls) {
        case ParamRef::Class::kPosR: return g.gaussians[ref.object].position_sph[0];
        case ParamRef::Class::kPosTheta: return g.gaussians[ref.object].position_sph[1];
        case ParamRef::Class::kPosPhi: return g.gaussians[ref.object].position_sph[2];
        case ParamRef::Class::kScaleRaw: {
            const Vec3& s = g.gaussians[ref.object].scale_raw;
            return ref.comp == 0 ? s.x : ref.comp == 1 ? s.y : s.z;
        }
        case ParamRef::Class::kRotation: return g.gaussians[ref.object].rotation[ref.comp];
        case ParamRef::Class::kOpacityRaw: return g.gaussians[ref.object].opacity_raw;
        case ParamRef::Class::kSh: return g.gaussians[ref.object].sh[ref.comp];
        case ParamRef::Class::kCamRotation: return g.camera.rotation[ref.comp];
        case ParamRef::Class::kCamTranslation: {
            const Vec3& t = g.camera.translation;
            return ref.comp == 0 ? t.x : ref.comp == 1 ? t.y : t.z;
        }
        case ParamRef::Class::kCamFov: return g.camera.fov[ref.comp];
    }
    return 0.0;
}

void add_grad(GradientSet& g, const ParamRef& ref, double value) {
    switch (ref.cls) {
        case ParamRef::Class::kPosR: g.gaussians[ref.object].position_sph[0] += value; return;
        case ParamRef::Class::kPosTheta: g.gaussians[ref.object].position_sph[1] += value; return;
        case ParamRef::Class::kPosPhi: g.gaussians[ref.object].position_sph[2] += value; return;
        case ParamRef::Class::kScaleRaw: {
            Vec3& s = g.gaussians[ref.object].scale_raw;
            (ref.comp == 0 ? s.x : ref.comp == 1 ? s.y : s.z) += value;
            return;
        }
        case ParamRef::Class::kRotation: g.gaussians[ref.object].rotation[ref.comp] += value; return;
        case ParamRef::Class::kOpacityRaw: g.gaussians[ref.object].opacity_raw += value; return;
        case ParamRef::Class::kSh: g.gaussians[ref.object].sh[ref.comp] += value; return;
        case ParamRef::Class::kCamRotation: g.camera.rotation[ref.comp] += value; return;
        case ParamRef::Class::kCamTranslation: {
            Vec3& t = g.camera.translation;
            (ref.comp == 0 ? t.x : ref.comp == 1 ? t.y : t.z) += value;
            return;
        }
        case ParamRef::Class::kCamFov: g.camera.fov[ref.comp] += value; return;
    }
}

FiniteDiffResult finite_diff_grad(const GaussianCloud& cloud, const Camera& cam,
                                  const ImageLoss& loss, double h, const RenderOptions& ropts_in) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
    RenderOptions ropts = ropts_in;
    ropts.deterministic = true;
    ropts.threads = 1;

    const auto refs = enumerate_params(cloud, true);
    FiniteDiffResult result{GradientSet::zeros(cloud), {}};
    result.status.assign(refs.size(), ProbeStatus::kOk);

    const uint64_t base_hash = rasterize(cloud, cam, ropts).contributor_hash();

    auto probe = [&](const ParamRef& ref, double delta, uint64_t& hash) {
        GaussianCloud c = cloud;
        Camera k = cam;
        set_param(c, k, ref, get_param(cloud, cam, ref) + delta);
        if (ref.cls == ParamRef::Class::kRotation)
            c.gaussians[ref.object].rotation = c.gaussians[ref.object].rotation.normalized();
        if (ref.cls == ParamRef::Class::kCamRotation)
            k.extrinsics.rotation = k.extrinsics.rotation.normalized();
        const RenderOutput out = rasterize(c, k, ropts);
        hash = out.contributor_hash();
        return loss.value(out.rgb);
    };

    for (size_t i = 0; i < refs.size(); ++i) {
        uint64_t hp = 0, hm = 0;
        const double lp = probe(refs[i], +h, hp);
        const double lm = probe(refs[i], -h, hm);
        if (!std::isfinite(lp) || !std::isfinite(lm)) {
            result.status[i] = ProbeStatus::kNonFinite;
            continue;
        }
        if (hp != base_hash || hm != base_hash) result.status[i] = ProbeStatus::kBoundaryCrossed;
        add_grad(result.grad, refs[i], (lp - lm) / (2.0 * h));
    }
    return result;
}

double GradCheckReport::class_max(ParamRef::Class cls) const {
    double m = 0.0;
    for (const auto& e : entries)
        if (e.ref.cls == cls && e.status == ProbeStatus::kOk) m = std::max(m, e.rel_err);
    return m;
}

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    os << (pass ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err << " tol=" << tol
       << " checked=" << checked << " excluded=" << excluded
       << " oracle_limited=" << oracle_limited;
    return os.str();
}

GradCheckReport gradcheck(const GaussianCloud& cloud, const Camera& cam, const ImageLoss& loss,
                          double tol, double h, const RenderOptions& ropts_in) {
    RenderOptions ropts = ropts_in;
    ropts.deterministic = true;
    ropts.threads = 1;

    const RenderOutput out = rasterize(cloud, cam, ropts);
    const GradientSet analytic = backward_render(cloud, cam, out, loss.grad(out.rgb));
    const FiniteDiffResult fd = finite_diff_grad(cloud, cam, loss, h, ropts);

    GradCheckReport report;
    report.tol = tol;
    const auto refs = enumerate_params(cloud, true);
    // refinement ladder, computed lazily for entries over tol
    std::array<std::optional<FiniteDiffResult>, 2> refined;
    const std::array<double, 2> refine_h{h * 0.5, h * 0.25};
    for (size_t i = 0; i < refs.size(); ++i) {
        GradCheckEntry e;
        e.ref = refs[i];
        e.analytic = get_grad(analytic, refs[i]);
        e.fd = get_grad(fd.grad, refs[i]);
        e.status = fd.status[i];
        if (e.status == ProbeStatus::kOk) {
            e.rel_err = std::abs(e.analytic - e.fd) /
                        std::max({std::abs(e.analytic), std::abs(e.fd), 1e-8});
            if (e.rel_err > tol) {
                const double err_h = std::abs(e.fd - e.analytic);
                const double floor = 1e-14 * std::max(1.0, std::abs(e.analytic));
                for (int r = 0; r < 2; ++r) {
                    if (!refined[r])
                        refined[r] = finite_diff_grad(cloud, cam, loss, refine_h[r], ropts);
                    if (refined[r]->status[i] != ProbeStatus::kOk) continue;
                    const double err_r =
                        std::abs(get_grad(refined[r]->grad, refs[i]) - e.analytic);
                    if (err_r <= 0.35 * err_h + floor) {
                        e.status = ProbeStatus::kOracleLimited;
                        break;
                    }
                }
            }
        }
        if (e.status == ProbeStatus::kOk) {
            report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
            ++report.checked;
        } else if (e.status == ProbeStatus::kOracleLimited) {
            ++report.oracle_limited;
        } else {
            ++report.excluded;
        }
        report.entries.push_back(e);
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace splatfit
