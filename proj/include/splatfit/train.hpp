#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "splatfit/grad.hpp"
#include "splatfit/losses.hpp"
#include "splatfit/render.hpp"
#include "splatfit/rng.hpp"

namespace splatfit {

/// Linear ramp from 0.1*base_lr over the warmup, then cosine decay to
/// 0.01*base_lr at total_steps; continuous at the junction.
struct Schedule {
    double base_lr = 0.00016;
    int64_t warmup_steps = 0;
    int64_t total_steps = 0;
};

double lr_at(const Schedule& sched, int64_t step);

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
};

/// Bias-corrected adaptive-moment update over a flat parameter vector;
/// per-parameter rate is lr * lr_scale[i].
class OptimState {
  public:
    OptimState(size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grads,
              std::span<const double> lr_scale, double lr);
    int64_t step_count() const { return t_; }
    size_t size() const { return m_.size(); }

  private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    int64_t t_ = 0;
};

struct ViewSamplerConfig {
    int max_views = 1;
    double decay = 0.5;  // lambda in pi_v = exp(-lambda*(v-1))
};

std::vector<double> view_count_pmf(const ViewSamplerConfig& cfg);
int sample_view_count(const ViewSamplerConfig& cfg, Rng& rng);

struct FilterWindow {
    std::vector<double> losses;
};

/// Keeps view i iff mean - k*sigma < L_i < mean + k*sigma with the population
/// sigma of the window; a zero-sigma window keeps every view.
std::vector<uint8_t> gradient_filter_mask(const FilterWindow& window, double k_sigma = 3.0);

struct PhasePlan {
    int64_t radius_only_until = 0;  // steps below this train r only

    struct Mask {
        bool r = true, theta = true, phi = true;
    };
    Mask phase1{true, false, false};
    Mask phase2{true, true, true};
};

PhasePlan::Mask progressive_mask(const PhasePlan& plan, int64_t step);

/// Raw decoder block: offsets around a token anchor plus pre-activation
/// attributes.
struct RawGaussian {
    Vec3 anchor;
    Vec3 position_offset;
    Vec3 scale_raw;
    std::array<double, 4> rotation_raw{0, 0, 0, 0};
    double opacity_raw = 0.0;
    std::vector<double> sh;
};

struct DecodedGaussian {
    Vec3 position;
    Vec3 scale;
    Quaternion rotation;
    double opacity = 0.0;
    std::vector<double> sh;
};

/// Activation/bias scheme: opacity = sigmoid(raw + logit(0.1)), scale =
/// exp(raw + ln 0.02), rotation = normalize(identity + raw), position =
/// anchor + offset clamped to max_offset_radius.
DecodedGaussian decode_raw_gaussian(const RawGaussian& raw, double max_offset_radius = 0.5);

struct LrMultipliers {
    double position = 10.0;
    double scale = 25.0;
    double rotation = 6.0;
    double opacity = 250.0;
    double sh = 15.0;
    double cam_rotation = 12.0;
    double cam_translation = 12.0;
    double cam_fov = 12.0;
};

enum class FilterSignal { kLoss, kGradNorm };

struct TrainConfig {
    Stage stage = Stage::kStage1;
    int64_t steps = 1000;
    Schedule schedule;  // total_steps <= 0 means "use steps"
    AdamConfig adam;
    LrMultipliers lr_mult;
    std::optional<LossWeights> weights;  // defaults to the stage preset
    ViewSamplerConfig sampler{8, 0.5};
    bool sample_views = true;  // false trains on every view each step
    bool filter_enabled = false;
    double filter_k_sigma = 3.0;
    FilterSignal filter_signal = FilterSignal::kLoss;
    PhasePlan phases;
    bool optimize_cloud = true;
    bool optimize_cameras = false;
    bool optimize_fov = true;
    bool recenter = true;
    bool safeguard = false;
    uint64_t seed = 0;
    int init_count = 256;  // cloud size when no initial cloud is given
    RenderOptions render;
};

struct HistoryRecord {
    int64_t step = 0;
    double lr = 0.0;
    LossBreakdown loss;
    double psnr = 0.0;  // over the selected views
    std::vector<int> view_indices;
    std::vector<uint8_t> filter_mask;
};

struct FitInput {
    std::vector<Image> targets;  // H x W x 3
    std::vector<Camera> cameras_init;
    std::optional<std::vector<Camera>> gt_cameras;  // required by stage 1
    std::optional<GaussianCloud> cloud_init;
    std::optional<BBox3> gt_box;  // required by stage 1
};

struct FitResult {
    GaussianCloud cloud;
    std::vector<Camera> cameras;
    std::vector<HistoryRecord> history;
    bool diverged = false;
};

/// Joint camera+geometry fitting: per step, sample a view count, render the
/// selected views, assemble the stage loss, filter per-view gradients, apply
/// the progressive position mask, and take an optimizer step at lr_at(step).
/// The mean Gaussian position is re-centered to the origin after steps where
/// every position component is trainable. A non-finite loss aborts with the
/// last good state.
FitResult fit_scene(const FitInput& input, const TrainConfig& cfg);

struct HarmonizeConfig {
    int64_t steps = 400;
    double lr = 0.1;
    AdamConfig adam;
    RenderOptions render;
};

/// Optimizes additive SH color deltas against harmonized targets under
/// 10 * (MSE + SSIM + L1); every other attribute is untouched. Returns one
/// delta block per Gaussian (same layout as Gaussian::sh).
std::vector<std::vector<double>> harmonize(const GaussianCloud& cloud,
                                           const std::vector<Camera>& cameras,
                                           const std::vector<Image>& targets,
                                           const HarmonizeConfig& cfg);

}  // namespace splatfit
