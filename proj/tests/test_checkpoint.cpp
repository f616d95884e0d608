#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xiqa/adamw.hpp"
#include "xiqa/checkpoint.hpp"

using namespace xiqa;
using testutil::TempDir;

namespace {

Errc code_of(const std::vector<char>& bytes) {
    try {
        deserialize_checkpoint(bytes);
    } catch (const Error& e) {
        return e.code();
    }
    return Errc::InvalidConfig;
}

Checkpoint sample() {
    auto m = init_params<float>(ModelConfig::desk(), 4);
    auto ck = make_checkpoint(m);
    AdamW<float> opt(m.pretext_parameters(), {.learning_rate = 3e-4});
    ck.optim = to_record(opt.state());
    ck.optim->step = 17;
    ck.optim->m[0][3] = 0.25f;
    ck.rng_state = "1 2 3\nsecond line";
    ck.epoch = 9;
    ck.loss_history = {0.5, 0.25, 0.125};
    ck.meta = {{"pretrain.seed", "7"}, {"note", "a,b\nc"}};
    return ck;
}

} // namespace

TEST(Checkpoint, RoundTripIsExact) {
    TempDir dir;
    auto ck = sample();
    save_checkpoint(ck, dir / "c.xiqa");
    const auto back = load_checkpoint(dir / "c.xiqa");
    EXPECT_EQ(back.config, ck.config);
    ASSERT_EQ(back.params.size(), ck.params.size());
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        EXPECT_EQ(back.params[i].name, ck.params[i].name);
        EXPECT_EQ(back.params[i].shape, ck.params[i].shape);
        EXPECT_EQ(back.params[i].values, ck.params[i].values);
    }
    ASSERT_TRUE(back.optim);
    EXPECT_EQ(back.optim->step, 17u);
    EXPECT_EQ(back.optim->m, ck.optim->m);
    EXPECT_EQ(back.optim->options.learning_rate, 3e-4);
    EXPECT_EQ(back.rng_state, ck.rng_state);
    EXPECT_EQ(back.epoch, 9u);
    EXPECT_EQ(back.loss_history, ck.loss_history);
    EXPECT_EQ(back.meta, ck.meta);
    EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
}

TEST(Checkpoint, ModelRebuildMatchesOutputs) {
    auto m = init_params<float>(ModelConfig::desk(), 5);
    const auto back = model_from_checkpoint<float>(deserialize_checkpoint(serialize_checkpoint(make_checkpoint(m))));
    const auto img = testutil::random_image(32, 32, 3, 1);
    EXPECT_EQ(encode(m, img).class_token.vector(), encode(back, img).class_token.vector());
}

TEST(Checkpoint, Corruption) {
    const auto good = serialize_checkpoint(sample());
    auto bad = good;
    bad[0] = 'Y';
    EXPECT_EQ(code_of(bad), Errc::BadMagic);
    bad = good;
    bad[4] = 9;
    EXPECT_EQ(code_of(bad), Errc::VersionUnsupported);
    EXPECT_EQ(code_of(std::vector<char>(good.begin(), good.begin() + good.size() / 2)), Errc::TruncatedFile);
    EXPECT_EQ(code_of({'X', 'I'}), Errc::TruncatedFile);
    TempDir dir;
    try {
        load_checkpoint(dir / "none.xiqa");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::UnreadableFile);
    }
}

TEST(Checkpoint, ShapeTableMismatch) {
    auto ck = sample();
    ck.params[0].shape = {1, 1};
    ck.params[0].values = {0.0f};
    try {
        model_from_checkpoint<float>(ck);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ShapeTableMismatch);
    }
    auto missing = sample();
    missing.params.pop_back();
    EXPECT_THROW(model_from_checkpoint<float>(missing), Error);
    auto extra = sample();
    extra.params.push_back({"stray", {1}, {1.0f}});
    EXPECT_THROW(model_from_checkpoint<float>(extra), Error);
}
