#include "splatfit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace splatfit {

double l1_loss(const Image& a, const Image& b) {
    require_same_shape(a, b, "l1_loss");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
    return s / static_cast<double>(a.data.size());
}

Image l1_loss_grad(const Image& a, const Image& b) {
    require_same_shape(a, b, "l1_loss_grad");
    Image g(a.width, a.height, a.channels);
    const double inv_n = 1.0 / static_cast<double>(a.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        g.data[i] = d > 0.0 ? inv_n : d < 0.0 ? -inv_n : 0.0;
    }
    return g;
}

double mse_loss(const Image& a, const Image& b) {
    require_same_shape(a, b, "mse_loss");
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

Image mse_loss_grad(const Image& a, const Image& b) {
    require_same_shape(a, b, "mse_loss_grad");
    Image g(a.width, a.height, a.channels);
    const double inv_n = 2.0 / static_cast<double>(a.data.size());
    for (size_t i = 0; i < a.data.size(); ++i) g.data[i] = inv_n * (a.data[i] - b.data[i]);
    return g;
}

namespace {

std::vector<double> gaussian_kernel(int n, double sigma) {
    std::vector<double> k(n);
    const double c = (n - 1) * 0.5;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        k[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// separable valid convolution, h x w -> (h-n+1) x (w-n+1)
void conv_valid(const std::vector<double>& in, int h, int w, const std::vector<double>& k,
                std::vector<double>& out, std::vector<double>& tmp) {
    const int n = static_cast<int>(k.size());
    const int vw = w - n + 1, vh = h - n + 1;
    tmp.assign(static_cast<size_t>(h) * vw, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < vw; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * in[static_cast<size_t>(y) * w + x + i];
            tmp[static_cast<size_t>(y) * vw + x] = s;
        }
    out.assign(static_cast<size_t>(vh) * vw, 0.0);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += k[j] * tmp[static_cast<size_t>(y + j) * vw + x];
            out[static_cast<size_t>(y) * vw + x] = s;
        }
}

// adjoint of conv_valid, (h-n+1) x (w-n+1) -> h x w
void conv_valid_adjoint(const std::vector<double>& in, int vh, int vw,
                        const std::vector<double>& k, int h, int w, std::vector<double>& out,
                        std::vector<double>& tmp) {
    const int n = static_cast<int>(k.size());
    tmp.assign(static_cast<size_t>(vh) * w, 0.0);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            const double v = in[static_cast<size_t>(y) * vw + x];
            for (int i = 0; i < n; ++i) tmp[static_cast<size_t>(y) * w + x + i] += k[i] * v;
        }
    out.assign(static_cast<size_t>(h) * w, 0.0);
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = tmp[static_cast<size_t>(y) * w + x];
            for (int j = 0; j < n; ++j) out[static_cast<size_t>(y + j) * w + x] += k[j] * v;
        }
}

void extract_plane(const Image& img, int ch, std::vector<double>& plane) {
    plane.resize(static_cast<size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            plane[static_cast<size_t>(y) * img.width + x] = img.at(y, x, ch);
}

struct SsimMoments {
    int vw = 0, vh = 0;
    std::vector<double> mu_a, mu_b, m_aa, m_bb, m_ab;
};

SsimMoments ssim_moments(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                         const std::vector<double>& k) {
    SsimMoments m;
    const int n = static_cast<int>(k.size());
    m.vw = w - n + 1;
    m.vh = h - n + 1;
    std::vector<double> tmp, prod(a.size());
    conv_valid(a, h, w, k, m.mu_a, tmp);
    conv_valid(b, h, w, k, m.mu_b, tmp);
    for (size_t i = 0; i < a.size(); ++i) prod[i] = a[i] * a[i];
    conv_valid(prod, h, w, k, m.m_aa, tmp);
    for (size_t i = 0; i < a.size(); ++i) prod[i] = b[i] * b[i];
    conv_valid(prod, h, w, k, m.m_bb, tmp);
    for (size_t i = 0; i < a.size(); ++i) prod[i] = a[i] * b[i];
    conv_valid(prod, h, w, k, m.m_ab, tmp);
    return m;
}

void require_ssim_shape(const Image& a, const Image& b, const SsimOptions& opts) {
    require_same_shape(a, b, "ssim");
    if (std::min(a.width, a.height) < opts.window)
        throw std::invalid_argument("ssim: image smaller than the window");
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimOptions& opts) {
    require_ssim_shape(a, b, opts);
    const auto k = gaussian_kernel(opts.window, opts.sigma);
    const double c1 = opts.k1 * opts.dynamic_range * opts.k1 * opts.dynamic_range;
    const double c2 = opts.k2 * opts.dynamic_range * opts.k2 * opts.dynamic_range;

    double total = 0.0;
    size_t count = 0;
    std::vector<double> pa, pb;
    for (int ch = 0; ch < a.channels; ++ch) {
        extract_plane(a, ch, pa);
        extract_plane(b, ch, pb);
        const SsimMoments m = ssim_moments(pa, pb, a.height, a.width, k);
        for (size_t i = 0; i < m.mu_a.size(); ++i) {
            const double mu_a = m.mu_a[i], mu_b = m.mu_b[i];
            const double var_a = m.m_aa[i] - mu_a * mu_a;
            const double var_b = m.m_bb[i] - mu_b * mu_b;
            const double cov = m.m_ab[i] - mu_a * mu_b;
            const double s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
        }
        count += m.mu_a.size();
    }
    return total / static_cast<double>(count);
}

Image ssim_grad(const Image& a, const Image& b, const SsimOptions& opts) {
    require_ssim_shape(a, b, opts);
    if (a.data == b.data) return Image(a.width, a.height, a.channels);  // gradient at the maximum
    const auto k = gaussian_kernel(opts.window, opts.sigma);
    const double c1 = opts.k1 * opts.dynamic_range * opts.k1 * opts.dynamic_range;
    const double c2 = opts.k2 * opts.dynamic_range * opts.k2 * opts.dynamic_range;

    Image grad(a.width, a.height, a.channels);
    std::vector<double> pa, pb, f_mu, f_aa, f_ab, g_mu, g_aa, g_ab, tmp;
    size_t count = 0;
    {
        const int vw = a.width - opts.window + 1, vh = a.height - opts.window + 1;
        count = static_cast<size_t>(vw) * vh * a.channels;
    }
    const double inv_n = 1.0 / static_cast<double>(count);

    for (int ch = 0; ch < a.channels; ++ch) {
        extract_plane(a, ch, pa);
        extract_plane(b, ch, pb);
        const SsimMoments m = ssim_moments(pa, pb, a.height, a.width, k);
        f_mu.assign(m.mu_a.size(), 0.0);
        f_aa.assign(m.mu_a.size(), 0.0);
        f_ab.assign(m.mu_a.size(), 0.0);
        for (size_t i = 0; i < m.mu_a.size(); ++i) {
            const double mu_a = m.mu_a[i], mu_b = m.mu_b[i];
            const double var_a = m.m_aa[i] - mu_a * mu_a;
            const double var_b = m.m_bb[i] - mu_b * mu_b;
            const double cov = m.m_ab[i] - mu_a * mu_b;
            const double a1 = 2.0 * mu_a * mu_b + c1, a2 = 2.0 * cov + c2;
            const double b1 = mu_a * mu_a + mu_b * mu_b + c1, b2 = var_a + var_b + c2;
            const double s = (a1 * a2) / (b1 * b2);
            const double d_mu = (a2 / (b1 * b2)) * 2.0 * mu_b - (s / b1) * 2.0 * mu_a;
            const double d_var = -s / b2;            // d/d(var_a) == d/d(m_aa)
            const double d_cov = 2.0 * a1 / (b1 * b2);  // d/d(cov) == d/d(m_ab)
            f_mu[i] = d_mu - 2.0 * mu_a * d_var - mu_b * d_cov;
            f_aa[i] = d_var;
            f_ab[i] = d_cov;
        }
        conv_valid_adjoint(f_mu, m.vh, m.vw, k, a.height, a.width, g_mu, tmp);
        conv_valid_adjoint(f_aa, m.vh, m.vw, k, a.height, a.width, g_aa, tmp);
        conv_valid_adjoint(f_ab, m.vh, m.vw, k, a.height, a.width, g_ab, tmp);
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) {
                const size_t i = static_cast<size_t>(y) * a.width + x;
                grad.at(y, x, ch) = inv_n * (g_mu[i] + 2.0 * pa[i] * g_aa[i] + pb[i] * g_ab[i]);
            }
    }
    return grad;
}

double psnr(const Image& a, const Image& b) {
    const double mse = mse_loss(a, b);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double rotation_loss(const Quaternion& q, const Quaternion& qhat) {
    const double minus = std::abs(q.w - qhat.w) + std::abs(q.x - qhat.x) +
                         std::abs(q.y - qhat.y) + std::abs(q.z - qhat.z);
    const double plus = std::abs(q.w + qhat.w) + std::abs(q.x + qhat.x) +
                        std::abs(q.y + qhat.y) + std::abs(q.z + qhat.z);
    return std::min(minus, plus);
}

double camera_loss(const Camera& cam, const Camera& target) {
    const Vec3 dt = cam.extrinsics.translation - target.extrinsics.translation;
    return rotation_loss(cam.extrinsics.rotation, target.extrinsics.rotation) + std::abs(dt.x) +
           std::abs(dt.y) + std::abs(dt.z) +
           std::abs(cam.intrinsics.fov_x - target.intrinsics.fov_x) +
           std::abs(cam.intrinsics.fov_y - target.intrinsics.fov_y);
}

namespace {
double sgn(double v) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; }
}  // namespace

CameraGrad camera_loss_grad(const Camera& cam, const Camera& target) {
    CameraGrad g;
    const Quaternion& q = cam.extrinsics.rotation;
    const Quaternion& qh = target.extrinsics.rotation;
    const double minus = std::abs(q.w - qh.w) + std::abs(q.x - qh.x) + std::abs(q.y - qh.y) +
                         std::abs(q.z - qh.z);
    const double plus = std::abs(q.w + qh.w) + std::abs(q.x + qh.x) + std::abs(q.y + qh.y) +
                        std::abs(q.z + qh.z);
    const double sign_target = minus <= plus ? -1.0 : 1.0;
    const std::array<double, 4> qa = q.as_array(), qha = qh.as_array();
    for (int i = 0; i < 4; ++i) g.rotation[i] = sgn(qa[i] + sign_target * qha[i]);
    const Vec3 dt = cam.extrinsics.translation - target.extrinsics.translation;
    g.translation = {sgn(dt.x), sgn(dt.y), sgn(dt.z)};
    g.fov[0] = sgn(cam.intrinsics.fov_x - target.intrinsics.fov_x);
    g.fov[1] = sgn(cam.intrinsics.fov_y - target.intrinsics.fov_y);
    return g;
}

double reg_loss(const GaussianCloud& cloud) {
    if (cloud.gaussians.empty()) throw std::invalid_argument("reg_loss: empty cloud");
    double opacity_term = 0.0, scale_term = 0.0;
    for (const Gaussian& g : cloud.gaussians) {
        const double a = g.opacity();
        opacity_term += (a - 1.0) * (a - 1.0);
        const Vec3 s = g.scale();
        scale_term += std::max({s.x, s.y, s.z});
    }
    const double n = static_cast<double>(cloud.size());
    return opacity_term / n + scale_term / n;
}

void reg_loss_backward(const GaussianCloud& cloud, double weight, GradientSet& grads) {
    const double inv_n = 1.0 / static_cast<double>(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian& g = cloud.gaussians[i];
        const double a = g.opacity();
        grads.gaussians[i].opacity_raw += weight * inv_n * 2.0 * (a - 1.0) * a * (1.0 - a);
        const Vec3 s = g.scale();
        int j = 0;
        if (s.y > s.x) j = 1;
        if (s.z > (j == 0 ? s.x : s.y)) j = 2;
        const double sj = j == 0 ? s.x : j == 1 ? s.y : s.z;
        Vec3& gs = grads.gaussians[i].scale_raw;
        (j == 0 ? gs.x : j == 1 ? gs.y : gs.z) += weight * inv_n * sj;
    }
}

double scale_loss(const BBox3& pred, const BBox3& target) {
    const Vec3 d = pred.extent - target.extent;
    return (std::abs(d.x) + std::abs(d.y) + std::abs(d.z)) / 3.0;
}

namespace {

// nearest-neighbor distance via a sort on x with pruning on the x gap
struct SortedSet {
    std::vector<Vec3> pts;  // ascending x

    explicit SortedSet(std::span<const Vec3> src) : pts(src.begin(), src.end()) {
        std::sort(pts.begin(), pts.end(), [](const Vec3& a, const Vec3& b) { return a.x < b.x; });
    }

    double nn_dist(const Vec3& q) const {
        const auto it = std::lower_bound(pts.begin(), pts.end(), q.x,
                                         [](const Vec3& p, double x) { return p.x < x; });
        double best = std::numeric_limits<double>::infinity();
        auto consider = [&](const Vec3& p) {
            const Vec3 d = p - q;
            best = std::min(best, d.dot(d));
        };
        for (auto r = it; r != pts.end(); ++r) {
            const double dx = r->x - q.x;
            if (dx * dx > best) break;
            consider(*r);
        }
        for (auto l = it; l != pts.begin();) {
            --l;
            const double dx = q.x - l->x;
            if (dx * dx > best) break;
            consider(*l);
        }
        return std::sqrt(best);
    }
};

}  // namespace

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_distance: empty point set");
    const SortedSet sa(a), sb(b);
    double ab = 0.0, ba = 0.0;
    for (const Vec3& p : a) ab += sb.nn_dist(p);
    for (const Vec3& p : b) ba += sa.nn_dist(p);
    return 0.5 * (ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size()));
}

double f_score(std::span<const Vec3> a, std::span<const Vec3> b, double tau) {
    if (a.empty() || b.empty()) throw std::invalid_argument("f_score: empty point set");
    if (tau <= 0.0) throw std::invalid_argument("f_score: tau must be positive");
    const SortedSet sa(a), sb(b);
    size_t hit_a = 0, hit_b = 0;
    for (const Vec3& p : a)
        if (sb.nn_dist(p) <= tau) ++hit_a;
    for (const Vec3& p : b)
        if (sa.nn_dist(p) <= tau) ++hit_b;
    const double precision = static_cast<double>(hit_a) / static_cast<double>(a.size());
    const double recall = static_cast<double>(hit_b) / static_cast<double>(b.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

LossWeights LossWeights::for_stage(Stage s) {
    LossWeights w;
    switch (s) {
        case Stage::kStage1: break;  // unit weights
        case Stage::kStage2:
            w.scale = 0.0;
            w.cam = 0.0;
            break;
        case Stage::kHarmonize:
            w.l1 = 10.0;
            w.ssim = 10.0;
            w.mse = 10.0;
            w.scale = 0.0;
            w.cam = 0.0;
            w.reg = 0.0;
            break;
    }
    return w;
}

LossBreakdown stage_loss(Stage stage, std::span<const ViewPair> views,
                         std::span<const Camera> cams, const GaussianCloud& cloud,
                         const std::vector<Camera>* gt_cams, const BBox3* gt_box,
                         const LossWeights& weights) {
    if (stage == Stage::kStage1 && (gt_cams == nullptr || gt_box == nullptr))
        throw std::invalid_argument("stage_loss: stage 1 requires ground-truth cameras and box");
    if (views.empty()) throw std::invalid_argument("stage_loss: no views");

    LossBreakdown out;
    const double inv_v = 1.0 / static_cast<double>(views.size());
    for (const ViewPair& vp : views) {
        const double l1_i = l1_loss(*vp.render, *vp.target);
        const double ssim_i = 1.0 - ssim(*vp.render, *vp.target);
        const double mse_i = weights.mse != 0.0 ? mse_loss(*vp.render, *vp.target) : 0.0;
        out.l1 += l1_i * inv_v;
        out.ssim_loss += ssim_i * inv_v;
        out.mse += mse_i * inv_v;
        out.per_view.push_back(weights.l1 * l1_i + weights.ssim * ssim_i + weights.mse * mse_i);
    }
    if (weights.cam != 0.0 && gt_cams != nullptr) {
        for (size_t i = 0; i < cams.size(); ++i) out.cam += camera_loss(cams[i], (*gt_cams)[i]);
        out.cam /= static_cast<double>(cams.size());
    }
    if (weights.scale != 0.0 && gt_box != nullptr)
        out.scale = scale_loss(compute_bbox(cloud.positions()), *gt_box);
    if (weights.reg != 0.0) out.reg = reg_loss(cloud);

    out.total = weights.l1 * out.l1 + weights.ssim * out.ssim_loss + weights.mse * out.mse +
                weights.cam * out.cam + weights.scale * out.scale + weights.reg * out.reg;
    out.lpips_available = false;
    return out;
}

Image stage_loss_image_grad(Stage stage, const Image& render, const Image& target, size_t n_views,
                            const LossWeights& weights) {
    (void)stage;
    Image g(render.width, render.height, render.channels);
    const double inv_v = 1.0 / static_cast<double>(n_views);
    if (weights.l1 != 0.0) {
        const Image gl = l1_loss_grad(render, target);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += weights.l1 * inv_v * gl.data[i];
    }
    if (weights.ssim != 0.0) {
        const Image gs = ssim_grad(render, target);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] -= weights.ssim * inv_v * gs.data[i];
    }
    if (weights.mse != 0.0) {
        const Image gm = mse_loss_grad(render, target);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += weights.mse * inv_v * gm.data[i];
    }
    return g;
}

}  // namespace splatfit
