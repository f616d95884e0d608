#include <gtest/gtest.h>

#include "xiqa/gradcheck.hpp"
#include "xiqa/ops.hpp"
#include "xiqa/synth.hpp"
#include "xiqa/train.hpp"

using namespace xiqa;

TEST(GradCheck, Quadratic) {
    Tensor<double> theta = Tensor<double>::scalar(3.0, true);
    std::vector<NamedParam<double>> params{{"theta", theta}};
    const auto rep = finite_diff_check([&] { return mul(theta, theta); }, params);
    ASSERT_EQ(rep.params.size(), 1u);
    EXPECT_NEAR(theta.grad()[0], 6.0, 1e-8);
    EXPECT_LE(rep.max_rel_error(), 1e-8);
    EXPECT_TRUE(rep.passed());
}

TEST(GradCheck, WrongGradientFails) {
    Tensor<double> theta({2}, {1.5, -0.5}, true);
    // forward is theta^2 but backward reports twice the true gradient
    auto doubled = [&] {
        const auto v = theta.values();
        std::vector<double> out{v[0] * v[0] + v[1] * v[1]};
        return Tensor<double>::from_op({}, std::move(out), {theta}, [t = theta](auto& node) mutable {
            auto g = t.mutable_grad();
            const auto v = t.values();
            for (std::size_t i = 0; i < 2; ++i) g[i] += node.grad[0] * 4.0 * v[i];
        });
    };
    std::vector<NamedParam<double>> params{{"theta", theta}};
    EXPECT_FALSE(finite_diff_check(doubled, params).passed());
}

TEST(GradCheck, TinyViTAllCoordinates) {
    ModelConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.num_heads = 2;
    c.encoder_depth = 2;
    c.decoder_depth = 2;
    auto m = init_params<double>(c, 9);
    const Image o = procedural_image(8, 3, "r");
    const Image a = apply_degradation(o, {DegradationKind::GaussianBlur, 2, 0});
    const Image b = apply_degradation(o, {DegradationKind::GaussianNoise, 4, 5});
    auto params = m.pretext_parameters();
    const auto rep = finite_diff_check([&] { return pretext_forward(m, o, a, b).total(); }, params);
    EXPECT_EQ(rep.params.size(), params.size());
    for (const auto& p : rep.params) {
        EXPECT_EQ(p.coords_checked, p.numel) << p.name;
        EXPECT_TRUE(p.passed) << p.name << " rel " << p.max_rel_error;
    }
}

TEST(GradCheck, NonFiniteLossRaises) {
    Tensor<double> theta = Tensor<double>::scalar(0.0, true);
    std::vector<NamedParam<double>> params{{"theta", theta}};
    auto f = [&] { return scale(theta, std::numeric_limits<double>::infinity()); };
    EXPECT_THROW(finite_diff_check(f, params), Error);
}
