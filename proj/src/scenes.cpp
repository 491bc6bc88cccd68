#include "splatfit/scenes.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace splatfit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr double kDegToRad = M_PI / 180.0;
}

std::vector<Camera> sample_orbit_cameras(const OrbitConfig& cfg) {
    Rng rng(cfg.seed);
    std::vector<Camera> cameras;
    cameras.reserve(static_cast<size_t>(cfg.orbits) * cfg.views_per_orbit);
    const int v = cfg.views_per_orbit;

    for (int k = 0; k < cfg.orbits; ++k) {
        const double phi = rng.uniform(cfg.elevation_deg[0], cfg.elevation_deg[1]) * kDegToRad;
        const double fov = rng.uniform(cfg.fov_deg[0], cfg.fov_deg[1]) * kDegToRad;
        for (int j = 0; j < v; ++j) {
            const double radius = rng.uniform(cfg.radius[0], cfg.radius[1]);
            const double delta = cfg.azimuth_jitter ? rng.uniform(-M_PI / v, M_PI / v) : 0.0;
            const double theta = 2.0 * M_PI * j / v + delta;
            const Vec3 position = spherical_to_cartesian({radius, theta, phi});

            const Vec3 v_hat = rng.unit_vector();
            const double r_o = rng.uniform(cfg.lookat_jitter[0], cfg.lookat_jitter[1]);
            const Vec3 lookat = v_hat * r_o;
            const Vec3 direction = (lookat - position).normalized();

            Camera cam;
            cam.extrinsics = look_at_extrinsics(position, direction);
            cam.intrinsics = {fov, fov, cfg.width, cfg.height};
            cameras.push_back(cam);
        }
    }
    return cameras;
}

GaussianCloud make_synthetic_cloud(int n, uint64_t seed, CloudStyle style,
                                   std::array<double, 2> shell_annulus) {
    if (n < 1) throw std::invalid_argument("make_synthetic_cloud: n must be >= 1");
    Rng rng(seed);
    GaussianCloud cloud;
    cloud.sh_degree = 1;
    cloud.gaussians.resize(n);

    std::vector<Vec3> positions(n);
    for (int i = 0; i < n; ++i) {
        if (style == CloudStyle::kShell) {
            positions[i] = rng.unit_vector() * rng.uniform(shell_annulus[0], shell_annulus[1]);
        } else {
            positions[i] = rng.unit_vector() * (0.6 * std::cbrt(rng.uniform()));
        }
    }
    Vec3 mean{0, 0, 0};
    for (const Vec3& p : positions) mean += p;
    mean = mean / static_cast<double>(n);
    double max_norm = 0.0;
    for (Vec3& p : positions) {
        p = p - mean;
        max_norm = std::max(max_norm, p.norm());
    }
    if (max_norm >= 0.95)
        for (Vec3& p : positions) p = p * (0.95 / max_norm);

    for (int i = 0; i < n; ++i) {
        Gaussian& g = cloud.gaussians[i];
        g.position_sph = cartesian_to_spherical(positions[i]);
        g.scale_raw = {rng.uniform(-0.7, 0.3), rng.uniform(-0.7, 0.3), rng.uniform(-0.7, 0.3)};
        g.rotation = rng.unit_quaternion();
        g.opacity_raw = rng.uniform(1.0, 4.0);
        g.sh.assign(static_cast<size_t>(cloud.sh_dim()) * 3, 0.0);
        for (int ch = 0; ch < 3; ++ch) g.sh[ch] = rng.uniform(0.5, 2.6);
        for (int k = 1; k < cloud.sh_dim(); ++k)
            for (int ch = 0; ch < 3; ++ch) g.sh[3 * k + ch] = rng.uniform(-0.12, 0.12);
    }
    return cloud;
}

Dataset render_dataset(const GaussianCloud& cloud, const std::vector<Camera>& cameras,
                       const RenderOptions& opts) {
    Dataset ds;
    ds.cameras = cameras;
    ds.gt_cloud = cloud;
    ds.metric_extent = cloud.metric_extent;
    for (const Camera& cam : cameras) {
        RenderOutput out = rasterize(cloud, cam, opts);
        ds.images.push_back(std::move(out.rgb));
        ds.alphas.push_back(std::move(out.alpha));
    }
    return ds;
}

std::vector<Camera> perturb_cameras(const std::vector<Camera>& cameras, double rot_deg_max,
                                    double trans_frac_max, uint64_t seed) {
    if (rot_deg_max < 0.0 || trans_frac_max < 0.0)
        throw std::invalid_argument("perturb_cameras: bounds must be >= 0");
    Rng rng(seed);
    std::vector<Camera> out = cameras;
    for (Camera& cam : out) {
        const Vec3 axis = rng.unit_vector();
        const double angle = rng.uniform(0.0, rot_deg_max * kDegToRad);
        const double half = angle * 0.5;
        const Quaternion dq{std::cos(half), axis.x * std::sin(half), axis.y * std::sin(half),
                            axis.z * std::sin(half)};
        const Vec3 center = cam.extrinsics.center();
        const Vec3 offset = rng.unit_vector() * rng.uniform(0.0, trans_frac_max * center.norm());

        cam.extrinsics.rotation = quat_multiply(dq, cam.extrinsics.rotation).normalized();
        cam.extrinsics.translation = -cam.extrinsics.rotmat().mul(center + offset);
    }
    return out;
}

namespace {

json camera_to_json(const Camera& cam) {
    const Quaternion& q = cam.extrinsics.rotation;
    const Vec3& t = cam.extrinsics.translation;
    return json{{"quaternion", {q.w, q.x, q.y, q.z}},
                {"translation", {t.x, t.y, t.z}},
                {"fov_x", cam.intrinsics.fov_x},
                {"fov_y", cam.intrinsics.fov_y},
                {"width", cam.intrinsics.width},
                {"height", cam.intrinsics.height}};
}

Camera camera_from_json(const json& j) {
    Camera cam;
    const auto& q = j.at("quaternion");
    cam.extrinsics.rotation = {q.at(0), q.at(1), q.at(2), q.at(3)};
    const auto& t = j.at("translation");
    cam.extrinsics.translation = {t.at(0), t.at(1), t.at(2)};
    cam.intrinsics.fov_x = j.at("fov_x");
    cam.intrinsics.fov_y = j.at("fov_y");
    cam.intrinsics.width = j.at("width");
    cam.intrinsics.height = j.at("height");
    return cam;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << content;
}

json read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return json::parse(is);
}

}  // namespace

void save_cameras(const std::string& path, const std::vector<Camera>& cameras) {
    json j = json::array();
    for (const Camera& cam : cameras) j.push_back(camera_to_json(cam));
    write_text(path, j.dump(2) + "\n");
}

std::vector<Camera> load_cameras(const std::string& path) {
    const json j = read_json(path);
    std::vector<Camera> cameras;
    for (const auto& jc : j) cameras.push_back(camera_from_json(jc));
    return cameras;
}

void save_cloud(const std::string& path, const GaussianCloud& cloud) {
    json jg = json::array();
    for (const Gaussian& g : cloud.gaussians) {
        jg.push_back(json{{"position_sph", {g.position_sph.r, g.position_sph.theta, g.position_sph.phi}},
                          {"scale_raw", {g.scale_raw.x, g.scale_raw.y, g.scale_raw.z}},
                          {"rotation", {g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z}},
                          {"opacity_raw", g.opacity_raw},
                          {"sh", g.sh}});
    }
    json j{{"sh_degree", cloud.sh_degree}, {"gaussians", std::move(jg)}};
    if (cloud.metric_extent)
        j["metric_extent"] = {cloud.metric_extent->extent.x, cloud.metric_extent->extent.y,
                              cloud.metric_extent->extent.z};
    write_text(path, j.dump(2) + "\n");
}

GaussianCloud load_cloud(const std::string& path) {
    const json j = read_json(path);
    GaussianCloud cloud;
    cloud.sh_degree = j.at("sh_degree");
    if (j.contains("metric_extent")) {
        const auto& e = j.at("metric_extent");
        cloud.metric_extent = BBox3{{e.at(0), e.at(1), e.at(2)}};
    }
    for (const auto& jg : j.at("gaussians")) {
        Gaussian g;
        const auto& p = jg.at("position_sph");
        g.position_sph = {p.at(0), p.at(1), p.at(2)};
        const auto& s = jg.at("scale_raw");
        g.scale_raw = {s.at(0), s.at(1), s.at(2)};
        const auto& q = jg.at("rotation");
        g.rotation = {q.at(0), q.at(1), q.at(2), q.at(3)};
        g.opacity_raw = jg.at("opacity_raw");
        g.sh = jg.at("sh").get<std::vector<double>>();
        cloud.gaussians.push_back(std::move(g));
    }
    return cloud;
}

namespace {

std::string frame_name(size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", i);
    return buf;
}

Image merge_rgba(const Image& rgb, const Image& alpha) {
    Image out(rgb.width, rgb.height, 4);
    for (int y = 0; y < rgb.height; ++y)
        for (int x = 0; x < rgb.width; ++x) {
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = rgb.at(y, x, c);
            out.at(y, x, 3) = alpha.at(y, x, 0);
        }
    return out;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds, const DatasetMeta& meta,
                  bool float_dumps) {
    fs::create_directories(fs::path(dir) / "images");
    save_cameras((fs::path(dir) / "cameras.json").string(), ds.cameras);
    if (ds.gt_cloud) save_cloud((fs::path(dir) / "cloud.json").string(), *ds.gt_cloud);

    for (size_t i = 0; i < ds.images.size(); ++i) {
        const std::string stem = (fs::path(dir) / "images" / frame_name(i)).string();
        write_png_rgba(stem + ".png", ds.images[i], ds.alphas[i]);
        if (float_dumps) write_f64(stem + ".f64", merge_rgba(ds.images[i], ds.alphas[i]));
    }

    json j{{"seed", meta.seed}, {"views", ds.images.size()}, {"float_dumps", float_dumps}};
    if (!meta.config_echo.empty()) j["config"] = json::parse(meta.config_echo);
    if (ds.metric_extent)
        j["metric_extent"] = {ds.metric_extent->extent.x, ds.metric_extent->extent.y,
                              ds.metric_extent->extent.z};
    write_text((fs::path(dir) / "meta.json").string(), j.dump(2) + "\n");
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    ds.cameras = load_cameras((fs::path(dir) / "cameras.json").string());
    const fs::path cloud_path = fs::path(dir) / "cloud.json";
    if (fs::exists(cloud_path)) ds.gt_cloud = load_cloud(cloud_path.string());

    const json meta = read_json((fs::path(dir) / "meta.json").string());
    if (meta.contains("metric_extent")) {
        const auto& e = meta.at("metric_extent");
        ds.metric_extent = BBox3{{e.at(0), e.at(1), e.at(2)}};
    }

    for (size_t i = 0; i < ds.cameras.size(); ++i) {
        const std::string stem = (fs::path(dir) / "images" / frame_name(i)).string();
        if (fs::exists(stem + ".f64")) {
            const Image rgba = read_f64(stem + ".f64");
            Image rgb(rgba.width, rgba.height, 3), alpha(rgba.width, rgba.height, 1);
            for (int y = 0; y < rgba.height; ++y)
                for (int x = 0; x < rgba.width; ++x) {
                    for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = rgba.at(y, x, c);
                    alpha.at(y, x, 0) = rgba.at(y, x, 3);
                }
            ds.images.push_back(std::move(rgb));
            ds.alphas.push_back(std::move(alpha));
        } else {
            RgbaImage im = read_png_rgba(stem + ".png");
            ds.images.push_back(std::move(im.rgb));
            ds.alphas.push_back(std::move(im.alpha));
        }
    }
    return ds;
}

}  // namespace splatfit
