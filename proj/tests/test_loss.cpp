#include "dropsplat/loss.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "dropsplat/rng.hpp"

namespace dropsplat {
namespace {

Image random_image(int w, int h, Rng& rng) {
    Image img(w, h);
    for (double& v : img.data) v = rng.uniform();
    return img;
}

Image constant_image(int w, int h, double value) {
    Image img(w, h);
    for (double& v : img.data) v = value;
    return img;
}

// Direct per-window SSIM with an explicit 2D kernel, no separable pass.
double oracle_ssim(const Image& a, const Image& b) {
    const int win = 11;
    double k1[win];
    double sum = 0.0;
    for (int i = 0; i < win; ++i) {
        double d = i - 5.0;
        k1[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += k1[i];
    }
    for (double& k : k1) k /= sum;
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int hv = a.height - win + 1, wv = a.width - win + 1;
    double total = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        for (int wy = 0; wy < hv; ++wy) {
            for (int wx = 0; wx < wv; ++wx) {
                double mu_a = 0, mu_b = 0, e_aa = 0, e_bb = 0, e_ab = 0;
                for (int ty = 0; ty < win; ++ty) {
                    for (int tx = 0; tx < win; ++tx) {
                        double kw = k1[ty] * k1[tx];
                        double va = a.at(wy + ty, wx + tx, ch);
                        double vb = b.at(wy + ty, wx + tx, ch);
                        mu_a += kw * va;
                        mu_b += kw * vb;
                        e_aa += kw * va * va;
                        e_bb += kw * vb * vb;
                        e_ab += kw * va * vb;
                    }
                }
                double var_a = e_aa - mu_a * mu_a;
                double var_b = e_bb - mu_b * mu_b;
                double cov = e_ab - mu_a * mu_b;
                total += (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2) /
                         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            }
        }
    }
    return total / (3.0 * hv * wv);
}

TEST(Psnr, IdenticalImagesHitTheCapExactly) {
    Rng rng(3);
    Image a = random_image(12, 9, rng);
    EXPECT_EQ(psnr(a, a), 100.0);
}

TEST(Psnr, UniformOffsetHasClosedForm) {
    Image a = constant_image(16, 16, 0.5);
    Image b = constant_image(16, 16, 0.6);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);  // mse 0.01 against peak 1
}

TEST(Psnr, MatchesDirectRecomputation) {
    Rng rng(7);
    Image a = random_image(13, 8, rng);
    Image b = random_image(13, 8, rng);
    double se = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) se += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    double expect = 10.0 * std::log10(1.0 / (se / a.data.size()));
    EXPECT_NEAR(psnr(a, b), expect, 1e-12);
}

TEST(Psnr, ShapeMismatchNamesBothShapes) {
    Image a = constant_image(8, 6, 0.0);
    Image b = constant_image(6, 8, 0.0);
    try {
        psnr(a, b);
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("psnr"), std::string::npos);
        EXPECT_NE(msg.find("8x6"), std::string::npos);
        EXPECT_NE(msg.find("6x8"), std::string::npos);
    }
}

TEST(Ssim, IdenticalImagesScoreOne) {
    Rng rng(11);
    Image a = random_image(20, 16, rng);
    EXPECT_DOUBLE_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, IsBitwiseSymmetric) {
    Rng rng(13);
    Image a = random_image(18, 14, rng);
    Image b = random_image(18, 14, rng);
    EXPECT_EQ(ssim(a, b), ssim(b, a));
}

TEST(Ssim, DistinctImagesScoreBelowOne) {
    Rng rng(17);
    Image a = random_image(16, 16, rng);
    Image b(16, 16);
    for (size_t i = 0; i < a.data.size(); ++i) b.data[i] = 1.0 - a.data[i];
    EXPECT_LT(ssim(a, b), 1.0);
}

TEST(Ssim, MatchesSlidingWindowOracle) {
    Rng rng(19);
    {
        Image a = random_image(20, 16, rng);
        Image b = random_image(20, 16, rng);
        EXPECT_NEAR(ssim(a, b), oracle_ssim(a, b), 1e-9);
    }
    {
        Image a = random_image(11, 11, rng);
        Image b = random_image(11, 11, rng);
        EXPECT_NEAR(ssim(a, b), oracle_ssim(a, b), 1e-9);
    }
}

TEST(Ssim, ConstantImagesHaveClosedForm) {
    double p = 0.3, q = 0.8;
    Image a = constant_image(15, 12, p);
    Image b = constant_image(15, 12, q);
    double c1 = 1e-4;
    double expect = (2.0 * p * q + c1) / (p * p + q * q + c1);  // variance terms vanish
    EXPECT_NEAR(ssim(a, b), expect, 1e-12);
}

TEST(Ssim, ImagesSmallerThanTheWindowThrow) {
    Rng rng(23);
    Image small_w = random_image(10, 11, rng);
    Image small_h = random_image(11, 10, rng);
    EXPECT_THROW(ssim(small_w, small_w), std::invalid_argument);
    EXPECT_THROW(ssim(small_h, small_h), std::invalid_argument);
    Image ok = random_image(11, 11, rng);
    EXPECT_NO_THROW(ssim(ok, ok));
}

TEST(ColorLoss, TotalIsExactlyL1PlusWeightedDssim) {
    Rng rng(29);
    Image a = random_image(16, 16, rng);
    Image b = random_image(16, 16, rng);
    for (double lambda : {0.2, 0.37}) {
        LossValue loss = color_loss(a, b, lambda);
        EXPECT_EQ(loss.total, loss.l1 + lambda * loss.d_ssim);
        EXPECT_GT(loss.l1, 0.0);
        EXPECT_GT(loss.d_ssim, 0.0);
    }
}

TEST(ColorLoss, PureL1GradientIsASignPattern) {
    Rng rng(31);
    Image a = random_image(14, 14, rng);
    Image b = random_image(14, 14, rng);
    a.data[5] = b.data[5];  // force one exactly-zero difference
    LossValue loss = color_loss(a, b, 0.0);
    double inv_n = 1.0 / a.data.size();
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        double expect = d > 0 ? inv_n : (d < 0 ? -inv_n : 0.0);
        EXPECT_EQ(loss.d_rendered.data[i], expect) << "pixel slot " << i;
    }
}

TEST(ColorLoss, IdenticalImagesGetAnExactlyZeroGradient) {
    Rng rng(37);
    Image a = random_image(16, 12, rng);
    LossValue loss = color_loss(a, a, 0.2);
    EXPECT_EQ(loss.l1, 0.0);
    EXPECT_EQ(loss.d_ssim, 0.0);
    for (double g : loss.d_rendered.data) EXPECT_EQ(g, 0.0);
}

TEST(ColorLoss, GradientMatchesFiniteDifferences) {
    Rng rng(41);
    Image a = random_image(13, 13, rng);
    Image b = random_image(13, 13, rng);
    double lambda = 0.2, h = 1e-5;
    LossValue loss = color_loss(a, b, lambda);
    int checked = 0;
    for (size_t i = 0; i < a.data.size() && checked < 20; i += 17) {
        if (std::abs(a.data[i] - b.data[i]) < 1e-3) continue;  // keep clear of the L1 kink
        Image up = a, dn = a;
        up.data[i] += h;
        dn.data[i] -= h;
        double fd = (color_loss(up, b, lambda).total - color_loss(dn, b, lambda).total) / (2.0 * h);
        double rel = std::abs(loss.d_rendered.data[i] - fd) / std::max(1e-12, std::abs(fd));
        EXPECT_LT(rel, 1e-4) << "pixel slot " << i;
        ++checked;
    }
    EXPECT_GE(checked, 15);
}

}  // namespace
}  // namespace dropsplat
