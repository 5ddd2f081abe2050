#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dropsplat/image_io.hpp"
#include "dropsplat/render.hpp"
#include "dropsplat/rng.hpp"
#include "dropsplat/sh.hpp"

namespace dropsplat {

struct ScenePoint {
    Vec3 xyz = Vec3::Zero();
    Vec3 rgb = Vec3(0.5, 0.5, 0.5);
};

// A full dataset: posed cameras with their ground-truth images, a scene
// extent in world units, and an optional sparse point seed for
// initialization. images[i] belongs to cameras[i].
struct SceneBundle {
    std::vector<Camera> cameras;
    std::vector<Image> images;
    double scene_extent = 1.0;
    std::vector<ScenePoint> points;

    std::vector<size_t> split_indices(const std::string& split) const {
        std::vector<size_t> idx;
        for (size_t i = 0; i < cameras.size(); ++i)
            if (cameras[i].split == split) idx.push_back(i);
        return idx;
    }
};

namespace detail {

inline nlohmann::json camera_to_json(const Camera& cam) {
    nlohmann::json j;
    j["focal"] = {cam.focal.x(), cam.focal.y()};
    j["principal"] = {cam.principal.x(), cam.principal.y()};
    j["resolution"] = {cam.width, cam.height};
    std::vector<double> r(9);
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) r[row * 3 + col] = cam.rotation_w2c(row, col);
    j["rotation_w2c"] = r;
    j["translation"] = {cam.translation_w2c.x(), cam.translation_w2c.y(), cam.translation_w2c.z()};
    j["near_clip"] = cam.near_clip;
    j["split"] = cam.split;
    j["image_path"] = cam.image_path;
    return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
    Camera cam;
    cam.focal = Vec2(j.at("focal").at(0), j.at("focal").at(1));
    cam.principal = Vec2(j.at("principal").at(0), j.at("principal").at(1));
    cam.width = j.at("resolution").at(0);
    cam.height = j.at("resolution").at(1);
    const auto& r = j.at("rotation_w2c");
    for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) cam.rotation_w2c(row, col) = r.at(row * 3 + col);
    cam.translation_w2c = Vec3(j.at("translation").at(0), j.at("translation").at(1), j.at("translation").at(2));
    if (j.contains("near_clip")) cam.near_clip = j.at("near_clip");
    cam.split = j.at("split");
    cam.image_path = j.at("image_path");
    cam.validate();
    return cam;
}

}  // namespace detail

// Writes the manifest plus one PNG per view. Camera image paths are assigned
// when empty; numeric fields rely on shortest round-trip JSON formatting, so
// a reload reproduces them bit-exactly.
inline void save_scene(SceneBundle& bundle, const std::string& manifest_path) {
    if (bundle.cameras.size() != bundle.images.size())
        throw std::invalid_argument("save_scene: cameras and images are not aligned");
    namespace fs = std::filesystem;
    fs::path root = fs::path(manifest_path).parent_path();
    fs::create_directories(root / "images");
    for (size_t i = 0; i < bundle.cameras.size(); ++i) {
        if (bundle.cameras[i].image_path.empty()) {
            char name[64];
            std::snprintf(name, sizeof name, "images/view_%03zu.png", i);
            bundle.cameras[i].image_path = name;
        }
        save_png((root / bundle.cameras[i].image_path).string(), bundle.images[i]);
    }
    nlohmann::json j;
    j["scene_extent"] = bundle.scene_extent;
    j["cameras"] = nlohmann::json::array();
    for (const Camera& cam : bundle.cameras) j["cameras"].push_back(detail::camera_to_json(cam));
    if (!bundle.points.empty()) {
        j["points"] = nlohmann::json::array();
        for (const ScenePoint& p : bundle.points) {
            j["points"].push_back({{"xyz", {p.xyz.x(), p.xyz.y(), p.xyz.z()}},
                                   {"rgb", {p.rgb.x(), p.rgb.y(), p.rgb.z()}}});
        }
    }
    std::ofstream out(manifest_path);
    if (!out) throw std::runtime_error("save_scene: cannot write manifest: " + manifest_path);
    out << j.dump(2) << "\n";
}

inline SceneBundle load_scene(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("load_scene: scene manifest not found: " + manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("load_scene: manifest parse error in " + manifest_path + ": " + e.what());
    }
    SceneBundle bundle;
    try {
        bundle.scene_extent = j.at("scene_extent");
        for (const auto& jc : j.at("cameras")) bundle.cameras.push_back(detail::camera_from_json(jc));
        if (j.contains("points")) {
            for (const auto& jp : j.at("points")) {
                ScenePoint p;
                p.xyz = Vec3(jp.at("xyz").at(0), jp.at("xyz").at(1), jp.at("xyz").at(2));
                p.rgb = Vec3(jp.at("rgb").at(0), jp.at("rgb").at(1), jp.at("rgb").at(2));
                bundle.points.push_back(p);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_scene: invalid manifest field in " + manifest_path + ": " + e.what());
    }
    fs::path root = fs::path(manifest_path).parent_path();
    for (const Camera& cam : bundle.cameras) bundle.images.push_back(load_png((root / cam.image_path).string()));
    return bundle;
}

enum class InitStrategy { from_points, random };

namespace detail {

// Isotropic log-scales from nearest-neighbor spacing, with a floor so
// coincident points stay usable.
inline std::vector<double> nn_distances(const std::vector<Vec3>& pts, double extent) {
    double fallback = 0.1 * extent;
    std::vector<double> d(pts.size(), fallback);
    for (size_t i = 0; i < pts.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < pts.size(); ++k) {
            if (k == i) continue;
            best = std::min(best, (pts[i] - pts[k]).norm());
        }
        if (std::isfinite(best)) d[i] = std::max(best, 1e-6 * extent);
    }
    return d;
}

}  // namespace detail

// Builds the optimizable starting cloud, either one Gaussian per scene point
// (color seeded into the constant coefficient) or n uniform gray Gaussians
// inside the extent box.
inline GaussianCloud init_cloud(const SceneBundle& bundle, InitStrategy strategy, int sh_degree, Rng& rng,
                                int random_count = 200) {
    check_sh_degree(sh_degree);
    GaussianCloud cloud;
    cloud.sh_degree = sh_degree;
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;
    if (strategy == InitStrategy::from_points) {
        if (bundle.points.empty())
            throw std::invalid_argument("init_cloud: from_points requires a scene with points");
        for (const ScenePoint& p : bundle.points) {
            positions.push_back(p.xyz);
            colors.push_back(p.rgb);
        }
    } else {
        if (random_count < 1) throw std::invalid_argument("init_cloud: random_count must be positive");
        double half = 0.5 * bundle.scene_extent;
        for (int i = 0; i < random_count; ++i) {
            positions.emplace_back(rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(-half, half));
            colors.emplace_back(0.5, 0.5, 0.5);
        }
    }
    std::vector<double> nn = detail::nn_distances(positions, bundle.scene_extent);
    double opacity_logit = opacity_to_logit(0.1);
    for (size_t i = 0; i < positions.size(); ++i) {
        Gaussian g;
        g.center = positions[i];
        g.log_scale = Vec3::Constant(std::log(nn[i]));
        g.opacity_logit = opacity_logit;
        g.sh.col(0) = (colors[i] - Vec3::Constant(0.5)) / kSh0;
        cloud.gaussians.push_back(g);
    }
    return cloud;
}

// Layout of the generated two-band test scene: colored blobs in a near and a
// far depth cluster, training cameras on a narrow arc, test cameras on a
// wider, slightly elevated arc, all looking at the origin.
struct SyntheticConfig {
    int n_train = 3;
    int n_test = 5;
    int width = 64;
    int height = 64;
    int n_near = 60;
    int n_far = 60;
    double lateral = 1.6;                    // half-extent of blob placement in x and y
    double near_band[2] = {-0.8, 0.2};       // world z range of the near cluster
    double far_band[2] = {1.8, 2.8};
    double camera_distance = 4.0;
    double train_arc_deg = 16.0;
    double test_arc_deg = 40.0;
    double test_elevation_deg = 6.0;
    double focal = 70.0;
    double blob_scale[2] = {0.06, 0.18};     // per-axis stddev range, log-uniform
    double opacity[2] = {0.55, 0.95};
    double color_range[2] = {0.1, 0.9};
    double view_dep = 0.06;                  // degree-1 coefficient spread
    double init_keep_fraction = 0.45;
    double init_noise = 0.2;                 // stddev of point jitter, world units
    Vec3 background = Vec3::Zero();
    uint64_t seed = 0;
};

namespace detail {

inline Camera make_lookat_camera(const Vec3& pos, const Vec3& target, double focal, int width, int height) {
    Camera cam;
    cam.focal = Vec2(focal, focal);
    cam.principal = Vec2(width / 2.0, height / 2.0);
    cam.width = width;
    cam.height = height;
    Vec3 fwd = (target - pos).normalized();
    Vec3 up(0, 1, 0);
    Vec3 right = up.cross(fwd).normalized();
    Vec3 down = fwd.cross(right);
    cam.rotation_w2c.row(0) = right;
    cam.rotation_w2c.row(1) = down;
    cam.rotation_w2c.row(2) = fwd;
    cam.translation_w2c = -(cam.rotation_w2c * pos);
    return cam;
}

inline Vec4 random_unit_quat(Rng& rng) {
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    double n = q.norm();
    return n > 1e-12 ? Vec4(q / n) : Vec4(1, 0, 0, 0);
}

}  // namespace detail

struct SyntheticScene {
    SceneBundle bundle;
    GaussianCloud ground_truth;
};

// Generates the scene and renders its ground-truth images with this
// renderer, so a perfect refit is representable. The near cluster occludes
// much of the far cluster in the training views; the wider test arc sees
// around it.
inline SyntheticScene generate_synthetic_scene(const SyntheticConfig& cfg) {
    if (cfg.n_train < 1 || cfg.n_test < 0) throw std::invalid_argument("synthetic scene: bad view counts");
    Rng rng = make_stream(cfg.seed, "scene");
    SyntheticScene out;
    GaussianCloud& gt = out.ground_truth;
    gt.sh_degree = 1;

    auto add_blobs = [&](int count, const double band[2]) {
        for (int i = 0; i < count; ++i) {
            Gaussian g;
            g.center = Vec3(rng.uniform(-cfg.lateral, cfg.lateral), rng.uniform(-cfg.lateral, cfg.lateral),
                            rng.uniform(band[0], band[1]));
            for (int k = 0; k < 3; ++k)
                g.log_scale[k] = rng.uniform(std::log(cfg.blob_scale[0]), std::log(cfg.blob_scale[1]));
            g.rotation = detail::random_unit_quat(rng);
            g.opacity_logit = opacity_to_logit(rng.uniform(cfg.opacity[0], cfg.opacity[1]));
            Vec3 color(rng.uniform(cfg.color_range[0], cfg.color_range[1]),
                       rng.uniform(cfg.color_range[0], cfg.color_range[1]),
                       rng.uniform(cfg.color_range[0], cfg.color_range[1]));
            g.sh.col(0) = (color - Vec3::Constant(0.5)) / kSh0;
            for (int b = 1; b < 4; ++b)
                for (int ch = 0; ch < 3; ++ch) g.sh(ch, b) = rng.uniform(-cfg.view_dep, cfg.view_dep);
            gt.gaussians.push_back(g);
        }
    };
    add_blobs(cfg.n_near, cfg.near_band);
    add_blobs(cfg.n_far, cfg.far_band);

    Vec3 lo = gt.gaussians[0].center, hi = lo;
    for (const Gaussian& g : gt.gaussians) {
        lo = lo.cwiseMin(g.center);
        hi = hi.cwiseMax(g.center);
    }
    out.bundle.scene_extent = (hi - lo).norm();

    auto arc_camera = [&](double angle_deg, double elev_deg) {
        double a = angle_deg * std::numbers::pi / 180.0;
        double e = elev_deg * std::numbers::pi / 180.0;
        Vec3 pos = cfg.camera_distance * Vec3(std::sin(a) * std::cos(e), std::sin(e), -std::cos(a) * std::cos(e));
        return detail::make_lookat_camera(pos, Vec3::Zero(), cfg.focal, cfg.width, cfg.height);
    };
    for (int i = 0; i < cfg.n_train; ++i) {
        double frac = cfg.n_train > 1 ? static_cast<double>(i) / (cfg.n_train - 1) : 0.5;
        Camera cam = arc_camera(-cfg.train_arc_deg / 2 + cfg.train_arc_deg * frac, 0.0);
        cam.split = "train";
        out.bundle.cameras.push_back(cam);
    }
    for (int i = 0; i < cfg.n_test; ++i) {
        double frac = cfg.n_test > 1 ? static_cast<double>(i) / (cfg.n_test - 1) : 0.5;
        Camera cam = arc_camera(-cfg.test_arc_deg / 2 + cfg.test_arc_deg * frac, cfg.test_elevation_deg);
        cam.split = "test";
        out.bundle.cameras.push_back(cam);
    }

    RenderSettings settings;
    settings.background = cfg.background;
    for (const Camera& cam : out.bundle.cameras)
        out.bundle.images.push_back(render(gt, cam, nullptr, settings).image);

    // sparse, jittered subset of the blob centers as the initialization seed
    size_t keep = static_cast<size_t>(std::nearbyint(cfg.init_keep_fraction * gt.gaussians.size()));
    std::vector<uint32_t> chosen =
        rng.sample_without_replacement(static_cast<uint32_t>(gt.gaussians.size()), static_cast<uint32_t>(keep));
    std::sort(chosen.begin(), chosen.end());
    for (uint32_t idx : chosen) {
        const Gaussian& g = gt.gaussians[idx];
        ScenePoint p;
        p.xyz = g.center + cfg.init_noise * Vec3(rng.normal(), rng.normal(), rng.normal());
        Vec3 color = Vec3::Constant(0.5) + g.sh.col(0) * kSh0;
        p.rgb = color.cwiseMax(0.0).cwiseMin(1.0);
        out.bundle.points.push_back(p);
    }
    return out;
}

// Cloud parameter files: plain JSON, full precision, one record per Gaussian.
inline void save_cloud(const GaussianCloud& cloud, const std::string& path) {
    nlohmann::json j;
    j["sh_degree"] = cloud.sh_degree;
    j["gaussians"] = nlohmann::json::array();
    int nb = cloud.basis_count();
    for (const Gaussian& g : cloud.gaussians) {
        nlohmann::json jg;
        jg["center"] = {g.center.x(), g.center.y(), g.center.z()};
        jg["log_scale"] = {g.log_scale.x(), g.log_scale.y(), g.log_scale.z()};
        jg["rotation"] = {g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]};
        jg["opacity_logit"] = g.opacity_logit;
        nlohmann::json sh = nlohmann::json::array();
        for (int ch = 0; ch < 3; ++ch) {
            nlohmann::json row = nlohmann::json::array();
            for (int b = 0; b < nb; ++b) row.push_back(g.sh(ch, b));
            sh.push_back(row);
        }
        jg["sh"] = sh;
        j["gaussians"].push_back(jg);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_cloud: cannot write " + path);
    out << j.dump() << "\n";
}

inline GaussianCloud load_cloud(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_cloud: cloud file not found: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("load_cloud: parse error in " + path + ": " + e.what());
    }
    GaussianCloud cloud;
    try {
        cloud.sh_degree = j.at("sh_degree");
        check_sh_degree(cloud.sh_degree);
        int nb = cloud.basis_count();
        for (const auto& jg : j.at("gaussians")) {
            Gaussian g;
            g.center = Vec3(jg.at("center").at(0), jg.at("center").at(1), jg.at("center").at(2));
            g.log_scale = Vec3(jg.at("log_scale").at(0), jg.at("log_scale").at(1), jg.at("log_scale").at(2));
            for (int k = 0; k < 4; ++k) g.rotation[k] = jg.at("rotation").at(k);
            g.opacity_logit = jg.at("opacity_logit");
            for (int ch = 0; ch < 3; ++ch)
                for (int b = 0; b < nb; ++b) g.sh(ch, b) = jg.at("sh").at(ch).at(b);
            cloud.gaussians.push_back(g);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_cloud: invalid field in " + path + ": " + e.what());
    }
    return cloud;
}

}  // namespace dropsplat
