#include "splatfit/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace splatfit {

double lr_at(const Schedule& sched, int64_t step) {
    const int64_t total = std::max<int64_t>(sched.total_steps, 1);
    step = std::clamp<int64_t>(step, 0, total);
    const int64_t warmup = std::clamp<int64_t>(sched.warmup_steps, 0, total);
    if (step < warmup) {
        const double f = static_cast<double>(step) / static_cast<double>(warmup);
        return sched.base_lr * (0.1 + 0.9 * f);
    }
    if (total == warmup) return sched.base_lr;
    const double f = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    const double cosine = 0.5 * (1.0 + std::cos(M_PI * f));
    return sched.base_lr * (0.01 + 0.99 * cosine);
}

void OptimState::step(std::span<double> params, std::span<const double> grads,
                      std::span<const double> lr_scale, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size() || lr_scale.size() != m_.size())
        throw std::invalid_argument("OptimState::step: size mismatch");
    for (size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw std::invalid_argument("OptimState::step: non-finite gradient at index " +
                                        std::to_string(i));
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i] * grads[i];
        const double m_hat = m_[i] / bc1;
        const double v_hat = v_[i] / bc2;
        const double rate = lr * lr_scale[i];
        params[i] -= rate * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * params[i]);
    }
}

std::vector<double> view_count_pmf(const ViewSamplerConfig& cfg) {
    if (cfg.max_views < 1) throw std::invalid_argument("view_count_pmf: max_views must be >= 1");
    std::vector<double> pmf(cfg.max_views);
    double sum = 0.0;
    for (int v = 1; v <= cfg.max_views; ++v) {
        pmf[v - 1] = std::exp(-cfg.decay * (v - 1));
        sum += pmf[v - 1];
    }
    for (double& p : pmf) p /= sum;
    return pmf;
}

int sample_view_count(const ViewSamplerConfig& cfg, Rng& rng) {
    const std::vector<double> pmf = view_count_pmf(cfg);
    const double u = rng.uniform();
    double cum = 0.0;
    for (int v = 0; v < cfg.max_views; ++v) {
        cum += pmf[v];
        if (u < cum) return v + 1;
    }
    return cfg.max_views;
}

std::vector<uint8_t> gradient_filter_mask(const FilterWindow& window, double k_sigma) {
    const size_t n = window.losses.size();
    if (n == 0) throw std::invalid_argument("gradient_filter_mask: empty window");
    double sum = 0.0, sumsq = 0.0;
    for (double v : window.losses) {
        sum += v;
        sumsq += v * v;
    }
    // scaled comparison (n*L_i - sum)^2 < k^2 * n * (n*sumsq - sum^2), exact
    // for integer-valued windows
    const double nd = static_cast<double>(n);
    const double var_scaled = nd * sumsq - sum * sum;
    std::vector<uint8_t> mask(n, 1);
    if (var_scaled <= 0.0) return mask;  // zero-sigma window keeps every view
    for (size_t i = 0; i < n; ++i) {
        const double dev = nd * window.losses[i] - sum;
        mask[i] = dev * dev < k_sigma * k_sigma * var_scaled ? 1 : 0;
    }
    return mask;
}

PhasePlan::Mask progressive_mask(const PhasePlan& plan, int64_t step) {
    return step < plan.radius_only_until ? plan.phase1 : plan.phase2;
}

DecodedGaussian decode_raw_gaussian(const RawGaussian& raw, double max_offset_radius) {
    DecodedGaussian out;
    Vec3 offset = raw.position_offset;
    const double n = offset.norm();
    if (n > max_offset_radius) offset = offset * (max_offset_radius / n);
    out.position = raw.anchor + offset;
    out.scale = {std::exp(raw.scale_raw.x + kScaleBias), std::exp(raw.scale_raw.y + kScaleBias),
                 std::exp(raw.scale_raw.z + kScaleBias)};
    out.rotation = Quaternion{1.0 + raw.rotation_raw[0], raw.rotation_raw[1], raw.rotation_raw[2],
                              raw.rotation_raw[3]}
                       .normalized();
    out.opacity = sigmoid(raw.opacity_raw + kOpacityBias);
    out.sh = raw.sh;
    return out;
}

namespace {

size_t gaussian_param_count(const GaussianCloud& cloud) {
    return 11 + static_cast<size_t>(cloud.sh_dim()) * 3;
}

size_t flat_size(const GaussianCloud& cloud, size_t n_cams) {
    return cloud.size() * gaussian_param_count(cloud) + 9 * n_cams;
}

void pack_params(const GaussianCloud& cloud, const std::vector<Camera>& cams,
                 std::vector<double>& flat) {
    flat.resize(flat_size(cloud, cams.size()));
    size_t k = 0;
    for (const Gaussian& g : cloud.gaussians) {
        flat[k++] = g.position_sph.r;
        flat[k++] = g.position_sph.theta;
        flat[k++] = g.position_sph.phi;
        flat[k++] = g.scale_raw.x;
        flat[k++] = g.scale_raw.y;
        flat[k++] = g.scale_raw.z;
        flat[k++] = g.rotation.w;
        flat[k++] = g.rotation.x;
        flat[k++] = g.rotation.y;
        flat[k++] = g.rotation.z;
        flat[k++] = g.opacity_raw;
        for (double v : g.sh) flat[k++] = v;
    }
    for (const Camera& c : cams) {
        flat[k++] = c.extrinsics.rotation.w;
        flat[k++] = c.extrinsics.rotation.x;
        flat[k++] = c.extrinsics.rotation.y;
        flat[k++] = c.extrinsics.rotation.z;
        flat[k++] = c.extrinsics.translation.x;
        flat[k++] = c.extrinsics.translation.y;
        flat[k++] = c.extrinsics.translation.z;
        flat[k++] = c.intrinsics.fov_x;
        flat[k++] = c.intrinsics.fov_y;
    }
}

void unpack_params(const std::vector<double>& flat, GaussianCloud& cloud,
                   std::vector<Camera>& cams) {
    size_t k = 0;
    for (Gaussian& g : cloud.gaussians) {
        g.position_sph.r = flat[k++];
        g.position_sph.theta = flat[k++];
        g.position_sph.phi = flat[k++];
        g.scale_raw.x = flat[k++];
        g.scale_raw.y = flat[k++];
        g.scale_raw.z = flat[k++];
        g.rotation.w = flat[k++];
        g.rotation.x = flat[k++];
        g.rotation.y = flat[k++];
        g.rotation.z = flat[k++];
        g.opacity_raw = flat[k++];
        for (double& v : g.sh) v = flat[k++];
    }
    for (Camera& c : cams) {
        c.extrinsics.rotation.w = flat[k++];
        c.extrinsics.rotation.x = flat[k++];
        c.extrinsics.rotation.y = flat[k++];
        c.extrinsics.rotation.z = flat[k++];
        c.extrinsics.translation.x = flat[k++];
        c.extrinsics.translation.y = flat[k++];
        c.extrinsics.translation.z = flat[k++];
        c.intrinsics.fov_x = flat[k++];
        c.intrinsics.fov_y = flat[k++];
    }
}

void pack_grads(const GradientSet& cloud_grads, const std::vector<CameraGrad>& cam_grads,
                const GaussianCloud& cloud, std::vector<double>& flat) {
    flat.resize(flat_size(cloud, cam_grads.size()));
    size_t k = 0;
    for (const GaussianGrad& g : cloud_grads.gaussians) {
        flat[k++] = g.position_sph[0];
        flat[k++] = g.position_sph[1];
        flat[k++] = g.position_sph[2];
        flat[k++] = g.scale_raw.x;
        flat[k++] = g.scale_raw.y;
        flat[k++] = g.scale_raw.z;
        for (int i = 0; i < 4; ++i) flat[k++] = g.rotation[i];
        flat[k++] = g.opacity_raw;
        for (double v : g.sh) flat[k++] = v;
    }
    for (const CameraGrad& c : cam_grads) {
        for (int i = 0; i < 4; ++i) flat[k++] = c.rotation[i];
        flat[k++] = c.translation.x;
        flat[k++] = c.translation.y;
        flat[k++] = c.translation.z;
        flat[k++] = c.fov[0];
        flat[k++] = c.fov[1];
    }
}

std::vector<double> build_lr_scale(const GaussianCloud& cloud, size_t n_cams,
                                   const TrainConfig& cfg, const PhasePlan::Mask& pos_mask) {
    std::vector<double> scale(flat_size(cloud, n_cams), 0.0);
    size_t k = 0;
    const double on = cfg.optimize_cloud ? 1.0 : 0.0;
    for (size_t i = 0; i < cloud.size(); ++i) {
        scale[k++] = on * (pos_mask.r ? cfg.lr_mult.position : 0.0);
        scale[k++] = on * (pos_mask.theta ? cfg.lr_mult.position : 0.0);
        scale[k++] = on * (pos_mask.phi ? cfg.lr_mult.position : 0.0);
        for (int c = 0; c < 3; ++c) scale[k++] = on * cfg.lr_mult.scale;
        for (int c = 0; c < 4; ++c) scale[k++] = on * cfg.lr_mult.rotation;
        scale[k++] = on * cfg.lr_mult.opacity;
        for (int c = 0; c < cloud.sh_dim() * 3; ++c) scale[k++] = on * cfg.lr_mult.sh;
    }
    const double cam_on = cfg.optimize_cameras ? 1.0 : 0.0;
    for (size_t i = 0; i < n_cams; ++i) {
        for (int c = 0; c < 4; ++c) scale[k++] = cam_on * cfg.lr_mult.cam_rotation;
        for (int c = 0; c < 3; ++c) scale[k++] = cam_on * cfg.lr_mult.cam_translation;
        for (int c = 0; c < 2; ++c)
            scale[k++] = cam_on * (cfg.optimize_fov ? cfg.lr_mult.cam_fov : 0.0);
    }
    return scale;
}

void scale_loss_backward(const GaussianCloud& cloud, const BBox3& gt_box, double weight,
                         GradientSet& grads) {
    const std::vector<Vec3> pos = cloud.positions();
    for (int axis = 0; axis < 3; ++axis) {
        size_t lo = 0, hi = 0;
        for (size_t i = 1; i < pos.size(); ++i) {
            if (pos[i][axis] < pos[lo][axis]) lo = i;
            if (pos[i][axis] > pos[hi][axis]) hi = i;
        }
        const double extent = pos[hi][axis] - pos[lo][axis];
        const double gt = axis == 0 ? gt_box.extent.x : axis == 1 ? gt_box.extent.y : gt_box.extent.z;
        const double d = extent - gt;
        const double s = weight / 3.0 * (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0);
        if (s == 0.0 || lo == hi) continue;
        for (const auto& [idx, sign] : {std::pair{hi, s}, std::pair{lo, -s}}) {
            Vec3 g_p{0, 0, 0};
            if (axis == 0)
                g_p.x = sign;
            else if (axis == 1)
                g_p.y = sign;
            else
                g_p.z = sign;
            const Vec3 g_sph = spherical_jacobian(cloud.gaussians[idx].position_sph)
                                   .mul_transposed(g_p);
            grads.gaussians[idx].position_sph[0] += g_sph.x;
            grads.gaussians[idx].position_sph[1] += g_sph.y;
            grads.gaussians[idx].position_sph[2] += g_sph.z;
        }
    }
}

double grad_l2_norm(const GradientSet& g) {
    double s = 0.0;
    auto add = [&s](double v) { s += v * v; };
    for (const auto& gg : g.gaussians) {
        for (double v : gg.position_sph) add(v);
        add(gg.scale_raw.x);
        add(gg.scale_raw.y);
        add(gg.scale_raw.z);
        for (double v : gg.rotation) add(v);
        add(gg.opacity_raw);
        for (double v : gg.sh) add(v);
    }
    for (double v : g.camera.rotation) add(v);
    add(g.camera.translation.x);
    add(g.camera.translation.y);
    add(g.camera.translation.z);
    add(g.camera.fov[0]);
    add(g.camera.fov[1]);
    return std::sqrt(s);
}

GaussianCloud make_init_cloud(int count, uint64_t seed) {
    Rng rng(seed);
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    cloud.gaussians.resize(count);
    for (Gaussian& g : cloud.gaussians) {
        const Vec3 p = rng.unit_vector() * (0.5 * std::cbrt(rng.uniform()));
        g.position_sph = cartesian_to_spherical(p);
        g.scale_raw = {0, 0, 0};
        g.rotation = {1, 0, 0, 0};
        g.opacity_raw = 0.0;
        g.sh.assign(static_cast<size_t>(cloud.sh_dim()) * 3, 0.0);
        for (int ch = 0; ch < 3; ++ch) g.sh[ch] = 0.5 / kSh0;
    }
    return cloud;
}

void postprocess_params(GaussianCloud& cloud, std::vector<Camera>& cams, const TrainConfig& cfg,
                        bool positions_fully_trainable) {
    for (Gaussian& g : cloud.gaussians) g.rotation = g.rotation.normalized();
    const double fov_lo = 10.0 * M_PI / 180.0, fov_hi = 170.0 * M_PI / 180.0;
    for (Camera& c : cams) {
        c.extrinsics.rotation = c.extrinsics.rotation.normalized();
        c.intrinsics.fov_x = std::clamp(c.intrinsics.fov_x, fov_lo, fov_hi);
        c.intrinsics.fov_y = std::clamp(c.intrinsics.fov_y, fov_lo, fov_hi);
    }
    if (cfg.recenter && cfg.optimize_cloud && positions_fully_trainable) {
        Vec3 mean{0, 0, 0};
        for (const Gaussian& g : cloud.gaussians) mean += g.position();
        mean = mean / static_cast<double>(cloud.size());
        for (Gaussian& g : cloud.gaussians)
            g.position_sph = cartesian_to_spherical(g.position() - mean);
    }
}

}  // namespace

FitResult fit_scene(const FitInput& input, const TrainConfig& cfg) {
    if (input.targets.empty()) throw std::invalid_argument("fit_scene: no target images");
    if (input.targets.size() != input.cameras_init.size())
        throw std::invalid_argument("fit_scene: target/camera count mismatch");
    if (cfg.stage == Stage::kStage1 && (!input.gt_cameras || !input.gt_box))
        throw std::invalid_argument("fit_scene: stage 1 requires ground-truth cameras and box");

    const LossWeights weights = cfg.weights.value_or(LossWeights::for_stage(cfg.stage));
    FitResult result;
    result.cloud = input.cloud_init ? *input.cloud_init : make_init_cloud(cfg.init_count, cfg.seed);
    result.cameras = input.cameras_init;

    Schedule sched = cfg.schedule;
    if (sched.total_steps <= 0) sched.total_steps = cfg.steps;

    const int n_views = static_cast<int>(input.targets.size());
    ViewSamplerConfig sampler = cfg.sampler;
    sampler.max_views = std::clamp(sampler.max_views, 1, n_views);

    Rng rng(cfg.seed);
    std::vector<double> flat, flat_grads;
    pack_params(result.cloud, result.cameras, flat);
    OptimState opt(flat.size(), cfg.adam);

    // last state whose loss evaluated finite
    GaussianCloud good_cloud = result.cloud;
    std::vector<Camera> good_cams = result.cameras;
    OptimState good_opt = opt;
    double last_loss = std::numeric_limits<double>::infinity();
    bool have_last = false;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        const PhasePlan::Mask pos_mask = progressive_mask(cfg.phases, step);
        const bool positions_full = pos_mask.r && pos_mask.theta && pos_mask.phi;

        int v = cfg.sample_views ? sample_view_count(sampler, rng) : n_views;
        std::vector<int> indices(n_views);
        for (int i = 0; i < n_views; ++i) indices[i] = i;
        if (v < n_views) {
            for (int i = 0; i < v; ++i)
                std::swap(indices[i], indices[i + static_cast<int>(rng.below(n_views - i))]);
            indices.resize(v);
            std::sort(indices.begin(), indices.end());
        }

        auto evaluate = [&](std::vector<RenderOutput>& renders, std::vector<ViewPair>& pairs,
                            std::vector<Camera>& sel_cams, std::vector<Camera>& sel_gt) {
            renders.clear();
            pairs.clear();
            sel_cams.clear();
            sel_gt.clear();
            for (int idx : indices) {
                renders.push_back(rasterize(result.cloud, result.cameras[idx], cfg.render));
                sel_cams.push_back(result.cameras[idx]);
                if (input.gt_cameras) sel_gt.push_back((*input.gt_cameras)[idx]);
            }
            for (size_t i = 0; i < renders.size(); ++i)
                pairs.push_back({&renders[i].rgb, &input.targets[indices[i]]});
            return stage_loss(cfg.stage, pairs, sel_cams, result.cloud,
                              input.gt_cameras ? &sel_gt : nullptr,
                              input.gt_box ? &*input.gt_box : nullptr, weights);
        };

        std::vector<RenderOutput> renders;
        std::vector<ViewPair> pairs;
        std::vector<Camera> sel_cams, sel_gt;
        LossBreakdown breakdown = evaluate(renders, pairs, sel_cams, sel_gt);

        if (!std::isfinite(breakdown.total)) {
            result.cloud = good_cloud;
            result.cameras = good_cams;
            result.diverged = true;
            break;
        }

        if (cfg.safeguard && have_last && breakdown.total > last_loss) {
            // reject the previous step and retry from the accepted state
            result.cloud = good_cloud;
            result.cameras = good_cams;
            opt = good_opt;
            pack_params(result.cloud, result.cameras, flat);
            sched.base_lr *= 0.5;
            breakdown = evaluate(renders, pairs, sel_cams, sel_gt);
        }

        good_cloud = result.cloud;
        good_cams = result.cameras;
        good_opt = opt;
        last_loss = breakdown.total;
        have_last = true;

        const double lr = lr_at(sched, step);
        HistoryRecord rec;
        rec.step = step;
        rec.lr = lr;
        rec.loss = breakdown;
        rec.view_indices = indices;
        double mse_sum = 0.0;
        for (size_t i = 0; i < indices.size(); ++i)
            mse_sum += mse_loss(renders[i].rgb, input.targets[indices[i]]);
        const double mse_mean = mse_sum / static_cast<double>(indices.size());
        rec.psnr = mse_mean == 0.0 ? std::numeric_limits<double>::infinity()
                                   : 10.0 * std::log10(1.0 / mse_mean);

        // per-view backward passes
        std::vector<GradientSet> view_grads;
        view_grads.reserve(indices.size());
        for (size_t i = 0; i < indices.size(); ++i) {
            const Image dimg = stage_loss_image_grad(cfg.stage, renders[i].rgb,
                                                     input.targets[indices[i]], indices.size(),
                                                     weights);
            view_grads.push_back(backward_render(result.cloud, result.cameras[indices[i]],
                                                 renders[i], dimg));
        }

        FilterWindow window;
        if (cfg.filter_signal == FilterSignal::kLoss) {
            window.losses = breakdown.per_view;
        } else {
            for (const auto& g : view_grads) window.losses.push_back(grad_l2_norm(g));
        }
        std::vector<uint8_t> mask(indices.size(), 1);
        if (cfg.filter_enabled) mask = gradient_filter_mask(window, cfg.filter_k_sigma);
        rec.filter_mask = mask;
        result.history.push_back(std::move(rec));

        GradientSet cloud_grads = GradientSet::zeros(result.cloud);
        std::vector<CameraGrad> cam_grads(result.cameras.size());
        for (size_t i = 0; i < indices.size(); ++i) {
            if (!mask[i]) continue;
            cloud_grads.accumulate(view_grads[i]);
            cam_grads[indices[i]] = view_grads[i].camera;
        }
        if (weights.cam != 0.0 && input.gt_cameras && cfg.optimize_cameras) {
            const double w = weights.cam / static_cast<double>(indices.size());
            for (int idx : indices) {
                const CameraGrad cg =
                    camera_loss_grad(result.cameras[idx], (*input.gt_cameras)[idx]);
                for (int c = 0; c < 4; ++c) cam_grads[idx].rotation[c] += w * cg.rotation[c];
                cam_grads[idx].translation += cg.translation * w;
                cam_grads[idx].fov[0] += w * cg.fov[0];
                cam_grads[idx].fov[1] += w * cg.fov[1];
            }
        }
        if (weights.reg != 0.0) reg_loss_backward(result.cloud, weights.reg, cloud_grads);
        if (weights.scale != 0.0 && input.gt_box)
            scale_loss_backward(result.cloud, *input.gt_box, weights.scale, cloud_grads);

        if (!pos_mask.theta || !pos_mask.phi) {
            for (auto& gg : cloud_grads.gaussians) {
                if (!pos_mask.theta) gg.position_sph[1] = 0.0;
                if (!pos_mask.phi) gg.position_sph[2] = 0.0;
                if (!pos_mask.r) gg.position_sph[0] = 0.0;
            }
        }

        pack_grads(cloud_grads, cam_grads, result.cloud, flat_grads);
        bool grads_finite = true;
        for (double g : flat_grads)
            if (!std::isfinite(g)) {
                grads_finite = false;
                break;
            }
        if (!grads_finite) {
            result.cloud = good_cloud;
            result.cameras = good_cams;
            result.diverged = true;
            break;
        }

        const std::vector<double> lr_scale =
            build_lr_scale(result.cloud, result.cameras.size(), cfg, pos_mask);
        pack_params(result.cloud, result.cameras, flat);
        opt.step(flat, flat_grads, lr_scale, lr);
        unpack_params(flat, result.cloud, result.cameras);
        postprocess_params(result.cloud, result.cameras, cfg, positions_full);
    }
    return result;
}

std::vector<std::vector<double>> harmonize(const GaussianCloud& cloud,
                                           const std::vector<Camera>& cameras,
                                           const std::vector<Image>& targets,
                                           const HarmonizeConfig& cfg) {
    if (cameras.size() != targets.size())
        throw std::invalid_argument("harmonize: camera/target count mismatch");
    if (cameras.empty()) throw std::invalid_argument("harmonize: no views");

    const LossWeights weights = LossWeights::for_stage(Stage::kHarmonize);
    const size_t sh_len = static_cast<size_t>(cloud.sh_dim()) * 3;
    GaussianCloud work = cloud;

    std::vector<double> deltas(cloud.size() * sh_len, 0.0);
    std::vector<double> grads(deltas.size(), 0.0);
    const std::vector<double> lr_scale(deltas.size(), 1.0);
    OptimState opt(deltas.size(), cfg.adam);
    Schedule sched;
    sched.base_lr = cfg.lr;
    sched.warmup_steps = 0;
    sched.total_steps = cfg.steps;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        std::fill(grads.begin(), grads.end(), 0.0);
        for (size_t view = 0; view < cameras.size(); ++view) {
            const RenderOutput out = rasterize(work, cameras[view], cfg.render);
            const Image dimg = stage_loss_image_grad(Stage::kHarmonize, out.rgb, targets[view],
                                                     cameras.size(), weights);
            const GradientSet g = backward_render(work, cameras[view], out, dimg);
            for (size_t i = 0; i < cloud.size(); ++i)
                for (size_t k = 0; k < sh_len; ++k) grads[i * sh_len + k] += g.gaussians[i].sh[k];
        }
        opt.step(deltas, grads, lr_scale, lr_at(sched, step));
        for (size_t i = 0; i < cloud.size(); ++i)
            for (size_t k = 0; k < sh_len; ++k)
                work.gaussians[i].sh[k] = cloud.gaussians[i].sh[k] + deltas[i * sh_len + k];
    }

    std::vector<std::vector<double>> out(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i)
        out[i].assign(deltas.begin() + i * sh_len, deltas.begin() + (i + 1) * sh_len);
    return out;
}

}  // namespace splatfit
