#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xiqa/degrade.hpp"
#include "xiqa/synth.hpp"

using namespace xiqa;

TEST(Degrade, LevelZeroIsIdentity) {
    const auto img = testutil::random_image(12, 10, 3, 1, "ref");
    for (auto k : kAllKinds) {
        const auto out = apply_degradation(img, {k, 0, 77});
        EXPECT_EQ(out.data, img.data) << kind_name(k);
        EXPECT_EQ(out.reference_id, "ref");
    }
}

TEST(Degrade, OutputsStayInRange) {
    const auto img = testutil::random_image(16, 16, 3, 2, "ref");
    for (auto k : kAllKinds)
        for (int l = 0; l <= kMaxLevel; ++l) {
            const auto out = apply_degradation(img, {k, l, 3});
            EXPECT_TRUE(out.same_shape(img));
            EXPECT_TRUE(out.valid()) << kind_name(k) << " " << l;
            EXPECT_EQ(out.reference_id, "ref");
        }
}

TEST(Degrade, KernelSumsToOne) {
    for (int l = 1; l <= kMaxLevel; ++l) {
        const auto taps = gaussian_kernel_1d(level_parameter(DegradationKind::GaussianBlur, l));
        double s1 = 0.0;
        for (double t : taps) s1 += t;
        EXPECT_NEAR(s1, 1.0, 1e-12);
        double s2 = 0.0;
        for (double a : taps)
            for (double b : taps) s2 += a * b;
        EXPECT_NEAR(s2, 1.0, 1e-12);
    }
}

TEST(Degrade, BlurKeepsConstantImage) {
    Image img(9, 9, 3, "c");
    for (auto& v : img.data) v = 0.37;
    for (int l = 1; l <= kMaxLevel; ++l)
        for (double v : apply_degradation(img, {DegradationKind::GaussianBlur, l, 0}).data) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Degrade, BlurMatchesDirectConvolution) {
    const auto img = testutil::random_image(8, 8, 1, 9);
    const double sigma = level_parameter(DegradationKind::GaussianBlur, 2);
    const auto out = apply_degradation(img, {DegradationKind::GaussianBlur, 2, 0});
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    double norm = 0.0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) norm += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    auto mirror = [](int i, int n) {
        while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
        return i;
    };
    for (int r : {0, 4, 7})
        for (int c : {0, 3, 7}) {
            double acc = 0.0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx)
                    acc += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) * img.at(mirror(r + dy, 8), mirror(c + dx, 8), 0);
            EXPECT_NEAR(out.at(r, c, 0), acc / norm, 1e-12) << r << "," << c;
        }
}

TEST(Degrade, SeverityMonotoneOnSeededCorpus) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const auto img = procedural_image(32, seed, "p");
        for (auto k : kAllKinds) {
            double prev = -1.0;
            for (int l = 0; l <= kMaxLevel; ++l) {
                const double e = image_mse(img, apply_degradation(img, {k, l, seed * 31 + 1}));
                EXPECT_GE(e, prev) << kind_name(k) << " level " << l;
                prev = e;
            }
        }
    }
}

TEST(Degrade, NoiseFieldFixedBySeed) {
    Image img(6, 6, 1, "n");
    for (auto& v : img.data) v = 0.5;
    const auto a = apply_degradation(img, {DegradationKind::GaussianNoise, 3, 5});
    const auto b = apply_degradation(img, {DegradationKind::GaussianNoise, 3, 5});
    const auto c = apply_degradation(img, {DegradationKind::GaussianNoise, 3, 6});
    EXPECT_EQ(a.data, b.data);
    EXPECT_NE(a.data, c.data);
}

TEST(Degrade, SaturationZeroIsGray) {
    const auto img = testutil::random_image(4, 4, 3, 5);
    const auto g = apply_degradation(img, {DegradationKind::ColorSaturation, 5, 0});
    for (std::size_t i = 0; i < 16; ++i) {
        const double luma = 0.299 * img.data[3 * i] + 0.587 * img.data[3 * i + 1] + 0.114 * img.data[3 * i + 2];
        for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(g.data[3 * i + ch], luma, 1e-12);
    }
}

TEST(Degrade, BlockQuantizationKeepsBlockMean) {
    Image img(8, 8, 1, "q");
    for (std::size_t i = 0; i < 64; ++i) img.data[i] = 0.3 + 0.4 * std::sin(0.7 * i) * 0.5;
    const auto q = apply_degradation(img, {DegradationKind::BlockQuantization, 5, 0});
    double m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < 64; ++i) {
        m0 += img.data[i];
        m1 += q.data[i];
    }
    EXPECT_NEAR(m0, m1, 1e-9);
}

TEST(Degrade, Errors) {
    const auto img = testutil::random_image(4, 4, 3, 5);
    try {
        apply_degradation(img, {DegradationKind::MeanShift, 6, 0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::LevelOutOfRange);
    }
    try {
        parse_kind("Sharpen");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::UnknownKind);
    }
    EXPECT_EQ(parse_kind("GB"), DegradationKind::GaussianBlur);
    EXPECT_EQ(parse_kind("ContrastChange"), DegradationKind::ContrastChange);
}
