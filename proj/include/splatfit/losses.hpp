#pragma once

#include <span>
#include <vector>

#include "splatfit/grad.hpp"
#include "splatfit/render.hpp"

namespace splatfit {

double l1_loss(const Image& a, const Image& b);
Image l1_loss_grad(const Image& a, const Image& b);  // d/d(a)

double mse_loss(const Image& a, const Image& b);
Image mse_loss_grad(const Image& a, const Image& b);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01, k2 = 0.03;
    double dynamic_range = 1.0;
};

/// Mean local SSIM over valid window positions, averaged across channels.
/// Requires min(width, height) >= window.
double ssim(const Image& a, const Image& b, const SsimOptions& opts = {});
Image ssim_grad(const Image& a, const Image& b, const SsimOptions& opts = {});  // d(ssim)/d(a)

/// 10*log10(1/MSE) for [0,1] images; +inf for identical inputs.
double psnr(const Image& a, const Image& b);

/// min(|q - qhat|_1, |q + qhat|_1); removes the quaternion sign ambiguity.
double rotation_loss(const Quaternion& q, const Quaternion& qhat);

/// rotation_loss + |t - that|_1 + |f - fhat|_1.
double camera_loss(const Camera& cam, const Camera& target);

/// Subgradient of camera_loss w.r.t. the first camera's (q, t, f).
CameraGrad camera_loss_grad(const Camera& cam, const Camera& target);

/// (1/N) sum (alpha_i - 1)^2 + (1/N) sum max_j s_ij over activated values.
double reg_loss(const GaussianCloud& cloud);
void reg_loss_backward(const GaussianCloud& cloud, double weight, GradientSet& grads);

/// Mean absolute error over the three box extents.
double scale_loss(const BBox3& pred, const BBox3& target);

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b);
double f_score(std::span<const Vec3> a, std::span<const Vec3> b, double tau);

enum class Stage { kStage1, kStage2, kHarmonize };

struct LossWeights {
    double l1 = 1.0;
    double ssim = 1.0;
    double mse = 0.0;
    double lpips = 0.0;  // perceptual slot; no implementation is shipped
    double scale = 1.0;
    double cam = 1.0;
    double reg = 1.0;

    static LossWeights for_stage(Stage s);
};

struct LossBreakdown {
    double l1 = 0.0, ssim_loss = 0.0, mse = 0.0, cam = 0.0, scale = 0.0, reg = 0.0;
    double total = 0.0;
    bool lpips_available = false;
    std::vector<double> per_view;  // weighted image-level loss per view
};

struct ViewPair {
    const Image* render = nullptr;
    const Image* target = nullptr;
};

/// Stage 1: L1 + SSIM + scale + cam + reg. Stage 2: L1 + SSIM + reg.
/// Harmonize: 10 * (MSE + SSIM + L1), images only. Image terms are means over
/// views; weights come from `weights` (unit defaults except harmonize).
LossBreakdown stage_loss(Stage stage, std::span<const ViewPair> views,
                         std::span<const Camera> cams, const GaussianCloud& cloud,
                         const std::vector<Camera>* gt_cams, const BBox3* gt_box,
                         const LossWeights& weights);

inline LossBreakdown stage_loss(Stage stage, std::span<const ViewPair> views,
                                std::span<const Camera> cams, const GaussianCloud& cloud,
                                const std::vector<Camera>* gt_cams = nullptr,
                                const BBox3* gt_box = nullptr) {
    return stage_loss(stage, views, cams, cloud, gt_cams, gt_box, LossWeights::for_stage(stage));
}

/// d(total)/d(render image) for one view of the stage loss above.
Image stage_loss_image_grad(Stage stage, const Image& render, const Image& target,
                            size_t n_views, const LossWeights& weights);

// Image losses pluggable into the gradcheck harness.
class L1Loss final : public ImageLoss {
  public:
    explicit L1Loss(Image target) : target_(std::move(target)) {}
    double value(const Image& rgb) const override { return l1_loss(rgb, target_); }
    Image grad(const Image& rgb) const override { return l1_loss_grad(rgb, target_); }

  private:
    Image target_;
};

class MseLoss final : public ImageLoss {
  public:
    explicit MseLoss(Image target) : target_(std::move(target)) {}
    double value(const Image& rgb) const override { return mse_loss(rgb, target_); }
    Image grad(const Image& rgb) const override { return mse_loss_grad(rgb, target_); }

  private:
    Image target_;
};

class SsimLoss final : public ImageLoss {  // 1 - ssim(render, target)
  public:
    explicit SsimLoss(Image target, SsimOptions opts = {})
        : target_(std::move(target)), opts_(opts) {}
    double value(const Image& rgb) const override { return 1.0 - ssim(rgb, target_, opts_); }
    Image grad(const Image& rgb) const override {
        Image g = ssim_grad(rgb, target_, opts_);
        for (double& v : g.data) v = -v;
        return g;
    }

  private:
    Image target_;
    SsimOptions opts_;
};

/// Fixed random linear functional of the image; smooth everywhere.
class LinearProbeLoss final : public ImageLoss {
  public:
    explicit LinearProbeLoss(Image weights) : weights_(std::move(weights)) {}
    double value(const Image& rgb) const override {
        double s = 0.0;
        for (size_t i = 0; i < rgb.data.size(); ++i) s += rgb.data[i] * weights_.data[i];
        return s;
    }
    Image grad(const Image& rgb) const override {
        (void)rgb;
        return weights_;
    }

  private:
    Image weights_;
};

}  // namespace splatfit
