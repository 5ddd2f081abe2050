#include "dropsplat/render.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "dropsplat/common.hpp"
#include "dropsplat/rng.hpp"

namespace dropsplat {
namespace {

Camera front_camera(double distance = 4.0, int width = 8, int height = 8, double focal = 9.0) {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.focal = Vec2(focal, focal);
    cam.principal = Vec2(width / 2.0, height / 2.0);
    cam.rotation_w2c = Mat3::Identity();
    cam.translation_w2c = Vec3(0, 0, distance);
    return cam;
}

struct WorkerGuard {
    size_t saved = worker_count();
    ~WorkerGuard() { set_worker_count(saved); }
};

// Reference renderer written directly from the compositing definition: every
// Gaussian is projected with Eigen primitives, inverted with Eigen, and
// blended per pixel without candidate lists or tiling.
Image oracle_render(const GaussianCloud& cloud, const Camera& cam, const DropPlan* plan,
                    const RenderSettings& settings, std::vector<double>* out_transmittance) {
    struct Flat {
        Vec2 mean;
        Mat2 inv_cov;
        double radius2;
        double depth;
        double otilde;
        Vec3 color;
        size_t index;
    };
    double comp = plan ? plan->compensation : 1.0;
    std::vector<Flat> flats;
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (plan && plan->dropped[i]) continue;
        const Gaussian& g = cloud.gaussians[i];
        Vec3 t = cam.rotation_w2c * g.center + cam.translation_w2c;
        if (!(t.z() > cam.near_clip)) continue;

        Eigen::Quaterniond q(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]);
        q.normalize();
        Mat3 scaled = q.toRotationMatrix() * g.log_scale.array().exp().matrix().asDiagonal();
        Mat3 sigma = scaled * scaled.transpose();

        Eigen::Matrix<double, 2, 3> jac;
        jac << cam.focal.x() / t.z(), 0, -cam.focal.x() * t.x() / (t.z() * t.z()),
               0, cam.focal.y() / t.z(), -cam.focal.y() * t.y() / (t.z() * t.z());
        Eigen::Matrix<double, 2, 3> a = jac * cam.rotation_w2c;
        Mat2 cov = a * sigma * a.transpose() + 0.3 * Mat2::Identity();

        Flat f;
        f.mean = Vec2(cam.focal.x() * t.x() / t.z() + cam.principal.x(),
                      cam.focal.y() * t.y() / t.z() + cam.principal.y());
        f.inv_cov = cov.inverse();
        Eigen::SelfAdjointEigenSolver<Mat2> eig(cov);
        double radius = settings.cutoff_sigma * std::sqrt(eig.eigenvalues().maxCoeff());
        f.radius2 = radius * radius;
        f.depth = t.z();
        f.otilde = comp / (1.0 + std::exp(-g.opacity_logit));

        Vec3 cam_pos = -(cam.rotation_w2c.transpose() * cam.translation_w2c);
        Vec3 dir = g.center - cam_pos;
        dir = dir.norm() > 1e-12 ? Vec3(dir / dir.norm()) : Vec3::UnitZ();
        double x = dir.x(), y = dir.y(), z = dir.z();
        double basis[9] = {0.28209479177387814,
                           -0.4886025119029199 * y,
                           0.4886025119029199 * z,
                           -0.4886025119029199 * x,
                           1.0925484305920792 * x * y,
                           -1.0925484305920792 * y * z,
                           0.31539156525252005 * (2 * z * z - x * x - y * y),
                           -1.0925484305920792 * x * z,
                           0.5462742152960396 * (x * x - y * y)};
        int nb = (cloud.sh_degree + 1) * (cloud.sh_degree + 1);
        Vec3 color(0.5, 0.5, 0.5);
        for (int k = 0; k < nb; ++k) color += cloud.gaussians[i].sh.col(k) * basis[k];
        f.color = color.cwiseMax(0.0);
        f.index = i;
        flats.push_back(f);
    }
    std::stable_sort(flats.begin(), flats.end(),
                     [](const Flat& a, const Flat& b) { return a.depth < b.depth; });

    Image img(cam.width, cam.height);
    if (out_transmittance) out_transmittance->assign(size_t(cam.width) * cam.height, 1.0);
    for (int py = 0; py < cam.height; ++py) {
        for (int px = 0; px < cam.width; ++px) {
            Vec3 c = Vec3::Zero();
            double t = 1.0;
            for (const Flat& f : flats) {
                if (t < settings.min_transmittance) break;
                double dx = (px + 0.5) - f.mean.x();
                double dy = (py + 0.5) - f.mean.y();
                if (dx * dx + dy * dy > f.radius2) continue;
                Vec2 d(dx, dy);
                double alpha = std::min(settings.alpha_max,
                                        f.otilde * std::exp(-0.5 * d.dot(f.inv_cov * d)));
                c += f.color * (alpha * t);
                t *= 1.0 - alpha;
            }
            for (int ch = 0; ch < 3; ++ch) img.at(py, px, ch) = c[ch] + t * settings.background[ch];
            if (out_transmittance) (*out_transmittance)[size_t(py) * cam.width + px] = t;
        }
    }
    return img;
}

GaussianCloud random_cloud(Rng& rng, size_t n, int sh_degree) {
    GaussianCloud cloud;
    cloud.sh_degree = sh_degree;
    cloud.gaussians.resize(n);
    for (Gaussian& g : cloud.gaussians) {
        g.center = Vec3(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.6, 0.6));
        g.log_scale = Vec3(rng.uniform(-2.3, -0.7), rng.uniform(-2.3, -0.7), rng.uniform(-2.3, -0.7));
        g.rotation = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        if (g.rotation.norm() < 1e-6) g.rotation = Vec4(1, 0, 0, 0);
        g.opacity_logit = opacity_to_logit(rng.uniform(0.3, 0.97));
        g.sh.setZero();
        int nb = (sh_degree + 1) * (sh_degree + 1);
        for (int ch = 0; ch < 3; ++ch)
            for (int k = 0; k < nb; ++k) g.sh(ch, k) = rng.uniform(-0.6, 0.6);
    }
    return cloud;
}

TEST(Render, MatchesScalarOraclePerPixel) {
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        int sh_degree = trial % 3;
        GaussianCloud cloud = random_cloud(rng, 5, sh_degree);
        if (trial % 7 == 0) cloud.gaussians[0].center.z() = -10.0;  // behind the camera
        Camera cam = front_camera();
        // small random camera tilt so off-axis Jacobian terms matter
        Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        axis.normalize();
        cam.rotation_w2c = Eigen::AngleAxisd(rng.uniform(-0.25, 0.25), axis).toRotationMatrix();
        cam.translation_w2c = Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 4.0);

        RenderSettings settings;
        settings.background = Vec3(rng.uniform(), rng.uniform(), rng.uniform());

        DropPlan plan;
        bool use_plan = trial % 2 == 1;
        if (use_plan) {
            Rng mask_rng(1000 + trial);
            plan = sample_drop_plan(cloud.size(), 0.25, mask_rng);
        }

        std::vector<double> oracle_t;
        Image expect = oracle_render(cloud, cam, use_plan ? &plan : nullptr, settings, &oracle_t);
        RenderOutput got = render(cloud, cam, use_plan ? &plan : nullptr, settings);

        for (size_t i = 0; i < expect.data.size(); ++i)
            worst = std::max(worst, std::abs(expect.data[i] - got.image.data[i]));
        for (size_t px = 0; px < oracle_t.size(); ++px)
            worst = std::max(worst, std::abs(oracle_t[px] - got.transmittance[px]));

        // the contribution log must replay to the recorded transmittance
        for (size_t px = 0; px < got.ranges.size(); ++px) {
            double t = 1.0;
            for (uint32_t k = 0; k < got.ranges[px].count; ++k) {
                const ContribEntry& e = got.entries[got.ranges[px].begin + k];
                EXPECT_EQ(e.transmittance, t);
                t *= 1.0 - e.alpha;
            }
            EXPECT_EQ(got.transmittance[px], t);
        }
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(CompositePixel, EmptyListIsPureBackground) {
    PixelComposite out = composite_pixel({}, Vec3(0.2, 0.4, 0.6));
    EXPECT_EQ(out.transmittance, 1.0);
    EXPECT_EQ(out.color.x(), 0.2);
    EXPECT_EQ(out.color.y(), 0.4);
    EXPECT_EQ(out.color.z(), 0.6);
}

TEST(CompositePixel, NearOpaqueContributionDominates) {
    Vec3 bg(1, 1, 1);
    PixelComposite out = composite_pixel({{Vec3(1, 0, 0), 0.99}}, bg);
    EXPECT_NEAR(out.color.x(), 0.99 + 0.01, 1e-15);
    EXPECT_NEAR(out.color.y(), 0.01, 1e-15);
    EXPECT_NEAR(out.transmittance, 0.01, 1e-15);
}

TEST(CompositePixel, HalfAlphaPairComposesGeometrically) {
    Vec3 bg(0, 0, 1);
    PixelComposite out = composite_pixel({{Vec3(1, 0, 0), 0.5}, {Vec3(0, 1, 0), 0.5}}, bg);
    EXPECT_DOUBLE_EQ(out.color.x(), 0.5);
    EXPECT_DOUBLE_EQ(out.color.y(), 0.25);
    EXPECT_DOUBLE_EQ(out.color.z(), 0.25);
    EXPECT_DOUBLE_EQ(out.transmittance, 0.25);
}

TEST(CompositePixel, RejectsAlphaOutsideRange) {
    EXPECT_THROW(composite_pixel({{Vec3::Zero(), -0.1}}, Vec3::Zero()), std::invalid_argument);
    EXPECT_THROW(composite_pixel({{Vec3::Zero(), 0.995}}, Vec3::Zero()), std::invalid_argument);
    EXPECT_NO_THROW(composite_pixel({{Vec3::Zero(), 0.99}}, Vec3::Zero()));
}

TEST(DepthSort, OrdersByDepthWithIndexTies) {
    std::vector<Splat2D> splats(4);
    splats[0].depth = 3.0;
    splats[1].depth = 1.0;
    splats[2].depth = 2.0;
    splats[3].depth = 1.0;
    std::vector<uint32_t> order = depth_sort(splats);
    EXPECT_EQ(order, (std::vector<uint32_t>{1, 3, 2, 0}));

    Rng rng(5);
    std::vector<Splat2D> many(1000);
    for (Splat2D& s : many) s.depth = rng.uniform_int(50);  // plenty of ties
    std::vector<uint32_t> got = depth_sort(many);
    std::vector<uint32_t> expect(many.size());
    std::iota(expect.begin(), expect.end(), 0u);
    std::stable_sort(expect.begin(), expect.end(),
                     [&](uint32_t a, uint32_t b) { return many[a].depth < many[b].depth; });
    EXPECT_EQ(got, expect);
}

TEST(Render, FullyDroppedPlanLeavesOnlyBackground) {
    Rng rng(9);
    GaussianCloud cloud = random_cloud(rng, 6, 1);
    Camera cam = front_camera();
    RenderSettings settings;
    settings.background = Vec3(0.3, 0.5, 0.7);
    DropPlan plan;
    plan.rate = 0.5;
    plan.compensation = 2.0;
    plan.dropped.assign(cloud.size(), 1);
    RenderOutput out = render(cloud, cam, &plan, settings);
    EXPECT_TRUE(out.entries.empty());
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            EXPECT_EQ(out.image.at(y, x, 0), 0.3);
            EXPECT_EQ(out.image.at(y, x, 1), 0.5);
            EXPECT_EQ(out.image.at(y, x, 2), 0.7);
        }
    }
    for (double t : out.transmittance) EXPECT_EQ(t, 1.0);
    for (uint8_t v : out.visible) EXPECT_EQ(v, 0);
}

TEST(Render, OutputIsInvariantToWorkerCount) {
    WorkerGuard guard;
    Rng rng(17);
    GaussianCloud cloud = random_cloud(rng, 20, 2);
    Camera cam = front_camera(4.0, 33, 17, 30.0);
    RenderSettings settings;
    settings.background = Vec3(0.1, 0.2, 0.3);

    set_worker_count(1);
    RenderOutput base = render(cloud, cam, nullptr, settings);
    for (size_t workers : {3u, 8u}) {
        set_worker_count(workers);
        RenderOutput out = render(cloud, cam, nullptr, settings);
        ASSERT_EQ(out.image.data.size(), base.image.data.size());
        EXPECT_TRUE(std::memcmp(out.image.data.data(), base.image.data.data(),
                                base.image.data.size() * sizeof(double)) == 0);
        ASSERT_EQ(out.transmittance.size(), base.transmittance.size());
        EXPECT_TRUE(std::memcmp(out.transmittance.data(), base.transmittance.data(),
                                base.transmittance.size() * sizeof(double)) == 0);
        ASSERT_EQ(out.entries.size(), base.entries.size());
        for (size_t i = 0; i < base.entries.size(); ++i) {
            EXPECT_EQ(out.entries[i].gaussian, base.entries[i].gaussian);
            EXPECT_EQ(out.entries[i].alpha, base.entries[i].alpha);
            EXPECT_EQ(out.entries[i].transmittance, base.entries[i].transmittance);
        }
        ASSERT_EQ(out.ranges.size(), base.ranges.size());
        for (size_t i = 0; i < base.ranges.size(); ++i) {
            EXPECT_EQ(out.ranges[i].begin, base.ranges[i].begin);
            EXPECT_EQ(out.ranges[i].count, base.ranges[i].count);
        }
        EXPECT_EQ(out.visible, base.visible);
    }
}

TEST(Render, GaussianOrderDoesNotChangeTheImage) {
    Rng rng(21);
    GaussianCloud cloud = random_cloud(rng, 10, 1);
    Camera cam = front_camera();
    RenderOutput base = render(cloud, cam);

    GaussianCloud shuffled = cloud;
    std::vector<uint32_t> perm = rng.sample_without_replacement(10, 10);
    for (size_t i = 0; i < perm.size(); ++i) shuffled.gaussians[i] = cloud.gaussians[perm[i]];
    RenderOutput out = render(shuffled, cam);
    for (size_t i = 0; i < base.image.data.size(); ++i) EXPECT_EQ(out.image.data[i], base.image.data[i]);
    for (size_t i = 0; i < base.transmittance.size(); ++i)
        EXPECT_EQ(out.transmittance[i], base.transmittance[i]);
}

TEST(Render, UnitColorsStayBounded) {
    Rng rng(33);
    GaussianCloud cloud = random_cloud(rng, 15, 0);
    for (Gaussian& g : cloud.gaussians) {
        g.sh.setZero();
        for (int ch = 0; ch < 3; ++ch) g.sh(ch, 0) = (rng.uniform() - 0.5) / kSh0;
    }
    Camera cam = front_camera();
    RenderSettings settings;  // black background
    RenderOutput out = render(cloud, cam, nullptr, settings);
    for (double v : out.image.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0 + 1e-12);
    }
}

TEST(Render, OccluderInFrontReducesTheColorBehindIt) {
    GaussianCloud cloud;
    cloud.sh_degree = 0;
    Gaussian red;
    red.center = Vec3(0, 0, 0.5);
    red.log_scale = Vec3::Constant(std::log(0.3));
    red.opacity_logit = opacity_to_logit(0.9);
    red.sh.setZero();
    red.sh(0, 0) = 0.5 / kSh0;  // pure red, channel value 1
    red.sh(1, 0) = -0.5 / kSh0;
    red.sh(2, 0) = -0.5 / kSh0;
    cloud.gaussians.push_back(red);

    Camera cam = front_camera(4.0, 16, 16, 20.0);
    double alone = render(cloud, cam).image.at(8, 8, 0);

    Gaussian black = red;
    black.center = Vec3(0, 0, -0.5);  // closer to the camera
    black.sh.setZero();
    black.sh(0, 0) = -0.5 / kSh0;
    black.sh(1, 0) = -0.5 / kSh0;
    black.sh(2, 0) = -0.5 / kSh0;
    cloud.gaussians.push_back(black);
    double occluded = render(cloud, cam).image.at(8, 8, 0);

    EXPECT_GT(alone, 0.5);
    EXPECT_LT(occluded, 0.5 * alone);
}

TEST(Render, DroppingEqualsRemovalWithCompensatedSurvivors) {
    Rng rng(49);
    GaussianCloud cloud = random_cloud(rng, 12, 1);
    for (Gaussian& g : cloud.gaussians) g.opacity_logit = opacity_to_logit(rng.uniform(0.2, 0.6));
    Camera cam = front_camera(4.0, 16, 16, 20.0);

    Rng mask_rng(50);
    DropPlan plan = sample_drop_plan(cloud.size(), 0.25, mask_rng);
    ASSERT_EQ(plan.drop_count(), 3u);
    RenderOutput full = render(cloud, cam, &plan);

    GaussianCloud survivors;
    survivors.sh_degree = cloud.sh_degree;
    for (size_t i = 0; i < cloud.size(); ++i)
        if (!plan.dropped[i]) survivors.gaussians.push_back(cloud.gaussians[i]);
    DropPlan comp_only;
    comp_only.rate = plan.rate;
    comp_only.compensation = plan.compensation;
    comp_only.dropped.assign(survivors.size(), 0);
    RenderOutput reduced = render(survivors, cam, &comp_only);

    for (size_t i = 0; i < full.image.data.size(); ++i)
        EXPECT_EQ(full.image.data[i], reduced.image.data[i]);
    for (size_t i = 0; i < full.transmittance.size(); ++i)
        EXPECT_EQ(full.transmittance[i], reduced.transmittance[i]);

    // folding the compensation into the stored opacity instead is equal only
    // up to the logit round trip
    GaussianCloud folded = survivors;
    for (Gaussian& g : folded.gaussians)
        g.opacity_logit = opacity_to_logit(logistic(g.opacity_logit) * plan.compensation);
    RenderOutput refit = render(folded, cam);
    for (size_t i = 0; i < full.image.data.size(); ++i)
        EXPECT_NEAR(full.image.data[i], refit.image.data[i], 1e-12);
}

TEST(Render, EmptyCloudRendersBackground) {
    GaussianCloud cloud;
    Camera cam = front_camera();
    RenderSettings settings;
    settings.background = Vec3(0.25, 0.5, 0.75);
    RenderOutput out = render(cloud, cam, nullptr, settings);
    EXPECT_TRUE(out.entries.empty());
    EXPECT_TRUE(out.visible.empty());
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) EXPECT_EQ(out.image.at(y, x, 2), 0.75);
}

TEST(Render, PlanSizeMismatchThrows) {
    Rng rng(61);
    GaussianCloud cloud = random_cloud(rng, 4, 0);
    Camera cam = front_camera();
    DropPlan plan;
    plan.dropped.assign(3, 0);
    EXPECT_THROW(render(cloud, cam, &plan), std::invalid_argument);
}

TEST(Render, CenterPixelAlphaIsTheActivatedOpacity) {
    GaussianCloud cloud;
    cloud.sh_degree = 0;
    Gaussian g;
    g.center = Vec3::Zero();
    g.log_scale = Vec3::Constant(std::log(0.2));
    g.opacity_logit = 2.0;
    g.sh.setZero();
    cloud.gaussians.push_back(g);

    Camera cam = front_camera(4.0, 33, 33, 40.0);  // principal lands on the center of pixel (16, 16)
    RenderOutput out = render(cloud, cam);
    size_t px = size_t(16) * 33 + 16;
    ASSERT_EQ(out.ranges[px].count, 1u);
    double alpha = out.entries[out.ranges[px].begin].alpha;
    EXPECT_EQ(alpha, logistic(2.0));
    for (size_t other = 0; other < out.ranges.size(); ++other) {
        if (other == px || out.ranges[other].count == 0) continue;
        EXPECT_LT(out.entries[out.ranges[other].begin].alpha, alpha);
    }
}

}  // namespace
}  // namespace dropsplat
