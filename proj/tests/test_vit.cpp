#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "xiqa/synth.hpp"
#include "xiqa/train.hpp"
#include "xiqa/vit.hpp"

using namespace xiqa;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.num_heads = 2;
    c.encoder_depth = 2;
    c.decoder_depth = 2;
    return c;
}

// Straight-line reference built from plain loops over std::vector.
using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor<double>& t) {
    Mat m(t.dim(0), std::vector<double>(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t[i * t.dim(1) + j];
    return m;
}

Mat affine(const Mat& x, const Tensor<double>& w, const Tensor<double>& b) {
    const std::size_t in = w.dim(0), out = w.dim(1);
    Mat y(x.size(), std::vector<double>(out));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < out; ++j) {
            double s = b[j];
            for (std::size_t k = 0; k < in; ++k) s += x[i][k] * w[k * out + j];
            y[i][j] = s;
        }
    return y;
}

Mat norm(const Mat& x, const Tensor<double>& g, const Tensor<double>& b) {
    Mat y = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double m = 0, v = 0;
        for (double e : x[i]) m += e;
        m /= x[i].size();
        for (double e : x[i]) v += (e - m) * (e - m);
        v /= x[i].size();
        for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = (x[i][j] - m) / std::sqrt(v + 1e-5) * g[j] + b[j];
    }
    return y;
}

Mat block(const Mat& x, const BlockWeights<double>& w, std::size_t heads) {
    const std::size_t L = x.size(), d = x[0].size(), dh = d / heads;
    const Mat h = norm(x, w.norm1_gain, w.norm1_bias);
    const Mat q = affine(h, w.wq, w.bq), k = affine(h, w.wk, w.bk), v = affine(h, w.wv, w.bv);
    Mat o(L, std::vector<double>(d, 0.0));
    for (std::size_t hd = 0; hd < heads; ++hd)
        for (std::size_t i = 0; i < L; ++i) {
            std::vector<double> s(L);
            double mx = -1e300;
            for (std::size_t j = 0; j < L; ++j) {
                double dot = 0;
                for (std::size_t c = 0; c < dh; ++c) dot += q[i][hd * dh + c] * k[j][hd * dh + c];
                s[j] = dot / std::sqrt(double(dh));
                mx = std::max(mx, s[j]);
            }
            double z = 0;
            for (auto& e : s) z += (e = std::exp(e - mx));
            for (std::size_t j = 0; j < L; ++j)
                for (std::size_t c = 0; c < dh; ++c) o[i][hd * dh + c] += s[j] / z * v[j][hd * dh + c];
        }
    Mat y = affine(o, w.wo, w.bo);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < d; ++j) y[i][j] += x[i][j];
    Mat f = affine(norm(y, w.norm2_gain, w.norm2_bias), w.fc1_w, w.fc1_b);
    for (auto& r : f)
        for (auto& e : r) e = 0.5 * e * (1 + std::tanh(std::sqrt(2 / M_PI) * (e + 0.044715 * e * e * e)));
    const Mat m = affine(f, w.fc2_w, w.fc2_b);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < d; ++j) y[i][j] += m[i][j];
    return y;
}

Mat oracle_encode(const CrossIqaModel<double>& m, const Image& img) {
    const Mat p = to_mat(patchify<double>(img, m.config.patch_size));
    Mat x = affine(p, m.enc_patch_w, m.enc_patch_b);
    x.insert(x.begin(), std::vector<double>(m.cls_token.values().begin(), m.cls_token.values().end()));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += m.enc_pos[i * x[i].size() + j];
    for (const auto& b : m.enc_blocks) x = block(x, b, m.config.num_heads);
    return norm(x, m.enc_norm_gain, m.enc_norm_bias);
}

Mat oracle_decode(const CrossIqaModel<double>& m, const std::vector<double>& token, const Image& original) {
    const Mat p = to_mat(patchify<double>(original, m.config.patch_size));
    Mat x = affine(p, m.dec_patch_w, m.dec_patch_b);
    x.insert(x.begin(), token);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += m.dec_pos[i * x[i].size() + j];
    for (const auto& b : m.dec_blocks) x = block(x, b, m.config.num_heads);
    x = norm(x, m.dec_norm_gain, m.dec_norm_bias);
    x.erase(x.begin());
    return affine(x, m.recon_w, m.recon_b);
}

} // namespace

TEST(Patchify, Shapes) {
    EXPECT_EQ(patchify<float>(testutil::random_image(32, 32, 3, 1), 8).shape(), (Shape{16, 192}));
    EXPECT_EQ(patchify<float>(testutil::random_image(224, 224, 3, 1), 16).shape(), (Shape{196, 768}));
    try {
        patchify<float>(testutil::random_image(30, 30, 3, 1), 8);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::IndivisibleDimensions);
    }
}

TEST(Patchify, RoundTripExact) {
    for (std::size_t c : {1u, 3u}) {
        const auto img = testutil::random_image(12, 16, c, 7);
        const auto back = unpatchify(patchify<double>(img, 4), 12, 16, c, 4);
        EXPECT_EQ(back.data, img.data);
    }
}

TEST(Patchify, Layout) {
    Image img(4, 4, 1, "l");
    for (std::size_t i = 0; i < 16; ++i) img.data[i] = i;
    const auto p = patchify<double>(img, 2);
    // second patch is the top-right 2x2 block
    EXPECT_EQ(p[4], 2.0);
    EXPECT_EQ(p[5], 3.0);
    EXPECT_EQ(p[6], 6.0);
    EXPECT_EQ(p[7], 7.0);
}

TEST(Embed, ZeroPatchesGiveClassToken) {
    auto m = init_params<double>(ModelConfig::desk(), 1);
    const auto zeros = Tensor<double>::zeros({16, 192});
    const auto seq = embed(zeros, m.enc_patch_w, Tensor<double>::zeros({64}), Tensor<double>::zeros({17, 64}), m.cls_token);
    EXPECT_EQ(seq.shape(), (Shape{17, 64}));
    for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(seq[j], m.cls_token[j]);
    for (std::size_t i = 64; i < seq.numel(); ++i) EXPECT_EQ(seq[i], 0.0);
}

TEST(Embed, PositionsBreakPermutationSymmetry) {
    auto m = init_params<double>(ModelConfig::desk(), 1);
    const auto img = testutil::random_image(32, 32, 3, 2);
    auto p = patchify<double>(img, 8);
    std::vector<double> swapped(p.values().begin(), p.values().end());
    std::swap_ranges(swapped.begin(), swapped.begin() + 192, swapped.begin() + 192);
    const auto a = encode_patches(m, p);
    const auto b = encode_patches(m, Tensor<double>({16, 192}, swapped));
    double diff = 0;
    for (std::size_t j = 0; j < 64; ++j) diff += std::abs(a.patch_tokens[j] - b.patch_tokens[64 + j]);
    EXPECT_GT(diff, 1e-6);
}

TEST(Block, ZeroBranchesAreIdentity) {
    auto m = init_params<double>(ModelConfig::desk(), 2);
    auto& w = m.enc_blocks[0];
    w.wo = Tensor<double>::zeros(w.wo.shape());
    w.fc2_w = Tensor<double>::zeros(w.fc2_w.shape());
    std::mt19937_64 rng(1);
    const auto x = patchify<double>(testutil::random_image(32, 40, 1, 3), 8); // 20 x 64
    const auto y = transformer_block(x, w, 4);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Block, SingleTokenAttentionIsValueProjection) {
    auto m = init_params<double>(ModelConfig::desk(), 3);
    const auto& w = m.enc_blocks[1];
    const auto x = slice_rows(m.enc_pos, 3, 4);
    const auto y = self_attention(x, w, 4);
    const auto expect = linear(linear(x, w.wv, w.bv), w.wo, w.bo);
    for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(y[j], expect[j], 1e-12);
}

TEST(Block, PermutationEquivariantWithoutPositions) {
    auto m = init_params<float>(ModelConfig::desk(), 4);
    std::mt19937_64 rng(9);
    std::normal_distribution<float> n(0.0f, 1.0f);
    std::vector<float> v(17 * 64);
    for (auto& e : v) e = n(rng);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<float> pv(v);
    for (std::size_t i = 0; i < 16; ++i)
        std::copy(v.begin() + (1 + perm[i]) * 64, v.begin() + (2 + perm[i]) * 64, pv.begin() + (1 + i) * 64);
    const auto y = transformer_block(Tensor<float>({17, 64}, v), m.enc_blocks[0], 4);
    const auto py = transformer_block(Tensor<float>({17, 64}, pv), m.enc_blocks[0], 4);
    for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(py[j], y[j], 1e-5);
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(py[(1 + i) * 64 + j], y[(1 + perm[i]) * 64 + j], 1e-5);
}

TEST(Encode, AttentionRowsSumToOne) {
    auto m = init_params<float>(ModelConfig::desk(), 5);
    std::vector<Tensor<float>> probs;
    encode(m, testutil::random_image(32, 32, 3, 6), &probs);
    ASSERT_EQ(probs.size(), 4u);
    for (const auto& p : probs) {
        ASSERT_EQ(p.shape(), (Shape{4, 17, 17}));
        for (std::size_t r = 0; r < 4 * 17; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 17; ++c) s += p[r * 17 + c];
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Encode, DeterministicAndShaped) {
    auto m = init_params<float>(ModelConfig::desk(), 5);
    const auto img = testutil::random_image(32, 32, 3, 6);
    const auto a = encode(m, img), b = encode(m, img);
    EXPECT_EQ(a.class_token.shape(), (Shape{1, 64}));
    EXPECT_EQ(a.patch_tokens.shape(), (Shape{16, 64}));
    EXPECT_EQ(a.class_token.vector(), b.class_token.vector());
    EXPECT_EQ(a.patch_tokens.vector(), b.patch_tokens.vector());
    try {
        encode(m, testutil::random_image(16, 16, 3, 6));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ConfigMismatch);
    }
}

TEST(Encode, MatchesStraightLineOracle) {
    auto m = init_params<double>(tiny(), 11);
    const auto img = testutil::random_image(8, 8, 3, 12);
    const auto out = encode(m, img);
    const Mat ref = oracle_encode(m, img);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.class_token[j], ref[0][j], 1e-12);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out.patch_tokens[i * 8 + j], ref[i + 1][j], 1e-12);
}

TEST(Decode, MatchesStraightLineOracle) {
    auto m = init_params<double>(tiny(), 13);
    const auto original = testutil::random_image(8, 8, 3, 14), degraded = testutil::random_image(8, 8, 3, 15);
    const auto enc = encode(m, degraded);
    const auto rec = decode_patches(m, assemble_cross_input(m, enc, original));
    const Mat ref = oracle_decode(m, enc.class_token.vector(), original);
    ASSERT_EQ(rec.shape(), (Shape{4, 48}));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 48; ++j) EXPECT_NEAR(rec[i * 48 + j], ref[i][j], 1e-12);
}

TEST(CrossInput, Construction) {
    auto m = init_params<double>(ModelConfig::desk(), 6);
    const auto original = testutil::random_image(32, 32, 3, 1);
    const auto zero = Tensor<double>::zeros({1, 64});
    const auto in = assemble_cross_input_patches(m, zero, patchify<double>(original, 8));
    EXPECT_EQ(in.sequence.shape(), (Shape{17, 64}));
    for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(in.sequence[j], m.dec_pos[j]);

    const auto ta = encode(m, testutil::random_image(32, 32, 3, 2)), tb = encode(m, testutil::random_image(32, 32, 3, 3));
    const auto a = assemble_cross_input(m, ta, original), b = assemble_cross_input(m, tb, original);
    bool row0_differs = false;
    for (std::size_t j = 0; j < 64; ++j) row0_differs = row0_differs || a.sequence[j] != b.sequence[j];
    EXPECT_TRUE(row0_differs);
    for (std::size_t i = 64; i < 17 * 64; ++i) EXPECT_EQ(a.sequence[i], b.sequence[i]);
}

TEST(Decode, ZeroHeadGivesMidGray) {
    auto m = init_params<float>(ModelConfig::desk(), 7);
    m.recon_w = Tensor<float>::zeros(m.recon_w.shape());
    const auto original = testutil::random_image(32, 32, 3, 1, "orig");
    const auto img = decode_reconstruct(m, assemble_cross_input(m, encode(m, original), original), "orig");
    EXPECT_EQ(img.height, 32u);
    EXPECT_EQ(img.channels, 3u);
    for (double v : img.data) EXPECT_EQ(v, 0.5);
}

TEST(Regress, HandChecks) {
    auto m = init_params<double>(ModelConfig::desk(), 8);
    const auto enc = encode(m, testutil::random_image(32, 32, 3, 2));
    EXPECT_EQ(regress_score(enc, Tensor<double>::zeros({64, 1}), Tensor<double>({1}, {0.7})), 0.7);

    EncoderOutput<double> basis{Tensor<double>::zeros({1, 64}), enc.patch_tokens};
    std::vector<double> e(64, 0.0);
    e[5] = 1.0;
    basis.class_token = Tensor<double>({1, 64}, e);
    EXPECT_EQ(regress_score(basis, Tensor<double>({64, 1}, e), Tensor<double>({1}, {0.25})), 1.25);

    double dot = m.reg_b[0];
    for (std::size_t j = 0; j < 64; ++j) dot += enc.class_token[j] * m.reg_w[j];
    EXPECT_NEAR(regress_score(enc, m.reg_w, m.reg_b), dot, 1e-12);
}

TEST(Init, SeededAndZeroBiases) {
    auto a = init_params<float>(ModelConfig::desk(), 3), b = init_params<float>(ModelConfig::desk(), 3);
    auto pa = a.named_parameters(), pb = b.named_parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].tensor.vector(), pb[i].tensor.vector()) << pa[i].name;
    for (const auto& p : pa) {
        const bool is_bias = p.name.ends_with(".bias") || p.name.ends_with(".bq") || p.name.ends_with(".bk") ||
                             p.name.ends_with(".bv") || p.name.ends_with(".bo");
        if (!is_bias || p.name.find("norm") != std::string::npos) continue;
        const double expect = p.name == "decoder.head.bias" ? 0.5 : 0.0;
        for (float v : p.tensor.values()) EXPECT_EQ(v, expect) << p.name;
    }
}

TEST(Init, ParameterCountClosedForm) {
    const auto c = ModelConfig::desk();
    const std::size_t d = c.embed_dim, pd = c.patch_dim(), seq = c.num_patches() + 1, h = c.mlp_hidden();
    const std::size_t per_block = 2 * d + 4 * (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
    const std::size_t encoder = pd * d + d + d + seq * d + c.encoder_depth * per_block + 2 * d;
    const std::size_t decoder = pd * d + d + seq * d + c.decoder_depth * per_block + 2 * d + d * pd + pd;
    const std::size_t regressor = d + 1;
    auto m = init_params<float>(c, 0);
    EXPECT_EQ(m.parameter_count(), encoder + decoder + regressor);
}

TEST(Config, Validation) {
    auto c = ModelConfig::desk();
    c.patch_size = 7;
    try {
        c.validate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::IndivisibleDimensions);
    }
    c = ModelConfig::desk();
    c.num_heads = 5;
    EXPECT_THROW(c.validate(), Error);
    const auto p = ModelConfig::full();
    EXPECT_EQ(p.image_size, 224u);
    EXPECT_EQ(p.encoder_depth, 12u);
    EXPECT_EQ(p.decoder_depth, 8u);
    EXPECT_EQ(p.num_patches(), 196u);
}

TEST(Sharing, BothBranchesAccumulateIntoOneEncoder) {
    auto m = init_params<double>(tiny(), 21);
    const auto x = procedural_image(8, 2, "r");
    const auto d = apply_degradation(x, {DegradationKind::GaussianBlur, 3, 0});
    auto both = pretext_forward(m, x, d, d);
    both.total().backward();
    std::vector<double> g_both(m.enc_patch_w.grad().begin(), m.enc_patch_w.grad().end());
    m.zero_grad();
    pretext_forward(m, x, d, d).mse_a.backward();
    for (std::size_t i = 0; i < g_both.size(); ++i) EXPECT_NEAR(m.enc_patch_w.grad()[i], 0.5 * g_both[i], 1e-12);
}

TEST(Sharing, ParamsAreSingleStorage) {
    auto m = init_params<float>(ModelConfig::desk(), 1);
    auto p1 = m.pretext_parameters();
    auto p2 = m.named_parameters();
    EXPECT_TRUE(p1[0].tensor.same_storage(m.enc_patch_w));
    EXPECT_TRUE(p2[0].tensor.same_storage(p1[0].tensor));
}
