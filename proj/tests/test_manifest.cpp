#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xiqa/manifest.hpp"
#include "xiqa/synth.hpp"

using namespace xiqa;
using testutil::TempDir;

namespace {

std::vector<std::filesystem::path> write_sources(const TempDir& dir, int n) {
    std::vector<std::filesystem::path> out;
    std::filesystem::create_directories(dir / "src");
    for (int i = 0; i < n; ++i) {
        const auto p = dir.path() / "src" / ("img" + std::to_string(i) + ".ppm");
        save_image(procedural_image(16, 100 + i), p);
        out.push_back(p);
    }
    return out;
}

} // namespace

TEST(Synth, OneSourceOneKind) {
    TempDir dir;
    std::mt19937_64 rng(1);
    const auto m = build_synthetic_dataset(write_sources(dir, 1), {DegradationKind::GaussianBlur}, dir / "out", rng);
    ASSERT_EQ(m.rows.size(), 6u);
    for (int l = 0; l <= 5; ++l) {
        EXPECT_EQ(m.rows[l].level, l);
        EXPECT_EQ(m.rows[l].reference_id, "img0");
        EXPECT_FALSE(m.rows[l].score);
        EXPECT_TRUE(std::filesystem::exists(m.resolve(m.rows[l])));
    }
    std::size_t files = 0;
    for (auto& e : std::filesystem::directory_iterator(dir / "out")) files += e.is_regular_file();
    EXPECT_EQ(files, 6u);
}

TEST(Synth, RowCounts) {
    TempDir dir;
    std::mt19937_64 rng(1);
    const auto src = write_sources(dir, 25);
    EXPECT_EQ(build_synthetic_dataset(src, {DegradationKind::GaussianBlur}, dir / "a", rng).rows.size(), 150u);
    const std::vector<DegradationKind> all(kAllKinds.begin(), kAllKinds.end());
    EXPECT_EQ(build_synthetic_dataset(std::vector(src.begin(), src.begin() + 2), all, dir / "b", rng).rows.size(), 2u * 31u);
}

TEST(Synth, SameSeedSameManifestBytes) {
    TempDir dir;
    const auto src = write_sources(dir, 2);
    const std::vector<DegradationKind> kinds{DegradationKind::GaussianNoise, DegradationKind::GaussianBlur};
    std::mt19937_64 r1(5), r2(5);
    write_manifest(build_synthetic_dataset(src, kinds, dir / "a", r1), dir / "a" / "manifest.csv");
    write_manifest(build_synthetic_dataset(src, kinds, dir / "b", r2), dir / "b" / "manifest.csv");
    EXPECT_EQ(testutil::read_bytes(dir / "a" / "manifest.csv"), testutil::read_bytes(dir / "b" / "manifest.csv"));
    EXPECT_EQ(testutil::read_bytes(dir / "a" / "img1__AGN_3.ppm"), testutil::read_bytes(dir / "b" / "img1__AGN_3.ppm"));
}

TEST(Synth, EmptySources) {
    TempDir dir;
    std::mt19937_64 rng(1);
    try {
        build_synthetic_dataset(std::vector<std::filesystem::path>{}, {DegradationKind::GaussianBlur}, dir / "o", rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::EmptySourceList);
    }
}

TEST(Synth, ProceduralDeterministic) {
    EXPECT_EQ(procedural_image(20, 3).data, procedural_image(20, 3).data);
    EXPECT_NE(procedural_image(20, 3).data, procedural_image(20, 4).data);
    EXPECT_TRUE(procedural_image(20, 3).valid());
}

TEST(Manifest, RoundTrip) {
    TempDir dir;
    DatasetManifest m;
    m.rows.push_back({"a.ppm", "a", DegradationKind::GaussianBlur, 0, 0.1});
    m.rows.push_back({"a__GB_3.ppm", "a", DegradationKind::GaussianBlur, 3, -3.0});
    m.rows.push_back({"b with space.ppm", "b", DegradationKind::BlockQuantization, 5, std::nullopt});
    write_manifest(m, dir / "m.csv");
    const auto back = read_manifest(dir / "m.csv");
    ASSERT_EQ(back.rows.size(), 3u);
    EXPECT_EQ(back.rows[0].score, 0.1);
    EXPECT_EQ(back.rows[1].level, 3);
    EXPECT_EQ(back.rows[2].path, "b with space.ppm");
    EXPECT_FALSE(back.rows[2].score);
    EXPECT_EQ(back.base_dir, dir.path());
    EXPECT_FALSE(back.all_labeled());
}

TEST(Manifest, RejectsCommasInFields) {
    TempDir dir;
    DatasetManifest m;
    m.rows.push_back({"a,b.ppm", "a", DegradationKind::GaussianBlur, 0, std::nullopt});
    try {
        write_manifest(m, dir / "m.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::InvalidConfig);
    }
}

TEST(Manifest, BadHeaderAndLevel) {
    TempDir dir;
    std::ofstream(dir / "h.csv") << "file,ref\n";
    EXPECT_THROW(read_manifest(dir / "h.csv"), Error);
    std::ofstream(dir / "l.csv") << kManifestHeader << "\nx.ppm,x,GaussianBlur,9,\n";
    try {
        read_manifest(dir / "l.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::LevelOutOfRange);
    }
}

TEST(Manifest, FormatDoubleRoundTrips) {
    for (double v : {0.1, -3.0, 1e-300, 0.98198050606196574, 123456.789}) EXPECT_EQ(parse_double(format_double(v)), v);
}
