#include <gtest/gtest.h>

#include <random>

#include "histoseq/features.hpp"
#include "support.hpp"

using namespace histoseq;
using testing_support::TempDir;

namespace {

Patch filled(std::uint8_t v) {
    Patch p;
    p.pixels = Image(256, 256, 3);
    std::fill(p.pixels.data.begin(), p.pixels.data.end(), v);
    return p;
}

Patch random_patch(std::mt19937_64& rng) {
    Patch p;
    p.pixels = Image(256, 256, 3);
    std::uniform_int_distribution<int> px(0, 255);
    for (auto& v : p.pixels.data) v = static_cast<std::uint8_t>(px(rng));
    return p;
}

// Two-pass statistics over one block and channel.
std::pair<double, double> block_stats(const Image& img, int br, int bc, int ch) {
    std::vector<double> vals;
    for (int r = br * 64; r < br * 64 + 64; ++r)
        for (int c = bc * 64; c < bc * 64 + 64; ++c) vals.push_back(img.at(r, c, ch));
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / static_cast<double>(vals.size()))};
}

void write_region_csv(const std::filesystem::path& path, int rows, int cols, double fill, int bad_r = -1, int bad_c = -1) {
    std::ofstream out(path);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c) out << ',';
            if (r == bad_r && c == bad_c) out << "nan";
            else out << fill + 0.001 * (r * cols + c);
        }
        out << '\n';
    }
}

}  // namespace

TEST(ToyExtract, ZeroPatch) {
    const FeatureVector f = toy_extract(filled(0));
    ASSERT_EQ(f.size(), 96);
    EXPECT_EQ(f.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ToyExtract, SaturatedPatch) {
    const FeatureVector f = toy_extract(filled(255));
    for (int k = 0; k < 96; ++k) EXPECT_DOUBLE_EQ(f[k], k % 2 == 0 ? 1.0 : 0.0);
}

TEST(ToyExtract, Checkerboard) {
    Patch p = filled(0);
    for (int r = 0; r < 256; ++r)
        for (int c = 0; c < 256; ++c)
            for (int ch = 0; ch < 3; ++ch) p.pixels.at(r, c, ch) = (r + c) % 2 ? 255 : 0;
    const FeatureVector f = toy_extract(p);
    for (int k = 0; k < 96; k += 2) {
        EXPECT_DOUBLE_EQ(f[k], 0.5);
        EXPECT_NEAR(f[k + 1], 127.5 / 128.0, 1e-12);
    }
}

TEST(ToyExtract, MatchesDirectStatistics) {
    std::mt19937_64 rng(3);
    const Patch p = random_patch(rng);
    const FeatureVector f = toy_extract(p);
    for (int br = 0; br < 4; ++br)
        for (int bc = 0; bc < 4; ++bc)
            for (int ch = 0; ch < 3; ++ch) {
                const auto [mean, sd] = block_stats(p.pixels, br, bc, ch);
                const int k = ((br * 4 + bc) * 3 + ch) * 2;
                EXPECT_NEAR(f[k], mean / 255.0, 1e-12);
                EXPECT_NEAR(f[k + 1], sd / 128.0, 1e-9);
            }
}

TEST(ToyExtract, Deterministic) {
    std::mt19937_64 rng(4);
    const Patch p = random_patch(rng);
    EXPECT_EQ(toy_extract(p), toy_extract(p));
}

TEST(BuildSequence, FortyEightPatches) {
    std::mt19937_64 rng(5);
    std::vector<Patch> patches;
    for (int i = 0; i < 48; ++i) patches.push_back(random_patch(rng));
    const FeatureSequence s = build_sequence(patches, BlockStatsExtractor{}, 2, "img");
    EXPECT_EQ(s.length(), 48);
    EXPECT_EQ(s.dim(), 96);
    EXPECT_EQ(s.label, 2);
}

TEST(BuildSequence, SinglePatch) {
    const std::vector<Patch> patches{filled(9)};
    EXPECT_EQ(build_sequence(patches, BlockStatsExtractor{}, 0).length(), 1);
}

TEST(BuildSequence, PermutingPatchesPermutesColumns) {
    std::mt19937_64 rng(6);
    std::vector<Patch> patches;
    for (int i = 0; i < 5; ++i) patches.push_back(random_patch(rng));
    const std::vector<int> perm{3, 0, 4, 1, 2};
    std::vector<Patch> shuffled;
    for (int k : perm) shuffled.push_back(patches[static_cast<std::size_t>(k)]);
    const auto a = build_sequence(patches, BlockStatsExtractor{}, 0);
    const auto b = build_sequence(shuffled, BlockStatsExtractor{}, 0);
    for (int t = 0; t < 5; ++t) EXPECT_EQ(b.features.col(t), a.features.col(perm[static_cast<std::size_t>(t)]));
}

TEST(BuildSequence, EmptyInputRejected) {
    EXPECT_THROW(build_sequence(std::vector<Patch>{}, BlockStatsExtractor{}, 0), ValidationError);
}

TEST(BuildSequence, DimensionMismatchRejected) {
    struct Liar final : FeatureExtractor {
        std::string name() const override { return "liar"; }
        int dim() const override { return 4; }
        FeatureVector extract(const Image&) const override { return FeatureVector::Zero(3); }
    };
    const std::vector<Patch> patches{filled(1)};
    EXPECT_THROW(build_sequence(patches, Liar{}, 0), ValidationError);
}

TEST(FeatureManifest, TwoRegionsOfDimension1024) {
    TempDir dir("manifest");
    write_region_csv(dir / "a.csv", 1024, 48, 0.1);
    write_region_csv(dir / "b.csv", 1024, 20, 0.2);
    testing_support::spit(dir / "m.json", R"({"dim": 1024, "regions": [
        {"id": "a", "label": 0, "m": 48, "file": "a.csv"},
        {"id": "b", "label": 1, "m": 20, "file": "b.csv"}]})");
    const auto data = load_feature_manifest(dir / "m.json");
    ASSERT_EQ(data.sequences.size(), 2u);
    EXPECT_EQ(data.sequences[0].dim(), 1024);
    EXPECT_EQ(data.sequences[0].length(), 48);
    EXPECT_EQ(data.sequences[1].length(), 20);
    EXPECT_EQ(data.sequences[1].region_id, "b");
}

TEST(FeatureManifest, EmptyManifest) {
    TempDir dir("manifest");
    testing_support::spit(dir / "m.json", R"({"dim": 96, "regions": []})");
    EXPECT_TRUE(load_feature_manifest(dir / "m.json").sequences.empty());
}

TEST(FeatureManifest, NanIsReportedWithPosition) {
    TempDir dir("manifest");
    write_region_csv(dir / "a.csv", 6, 8, 0.5, 3, 5);
    testing_support::spit(dir / "m.json", R"({"dim": 6, "regions": [{"id": "r7", "label": 0, "file": "a.csv"}]})");
    try {
        load_feature_manifest(dir / "m.json");
        FAIL() << "expected a data error";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("(3,5)"), std::string::npos) << msg;
        EXPECT_NE(msg.find("r7"), std::string::npos) << msg;
    }
}

TEST(FeatureManifest, MixedDimensionIsInconsistent) {
    TempDir dir("manifest");
    write_region_csv(dir / "a.csv", 4, 3, 0.0);
    write_region_csv(dir / "b.csv", 5, 3, 0.0);
    testing_support::spit(dir / "m.json", R"({"regions": [
        {"id": "a", "label": 0, "file": "a.csv"}, {"id": "b", "label": 0, "file": "b.csv"}]})");
    try {
        load_feature_manifest(dir / "m.json");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("inconsistency"), std::string::npos);
    }
}

TEST(FeatureManifest, RoundTripAtNineDigits) {
    TempDir dir("manifest");
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 3.0);
    FeatureDataset data;
    data.classes = {"a", "b"};
    for (int i = 0; i < 4; ++i) {
        FeatureSequence s;
        s.region_id = "r" + std::to_string(i);
        s.label = i % 2;
        s.features.resize(7, 1 + 3 * i);
        for (Eigen::Index k = 0; k < s.features.size(); ++k) {
            // Values with at most 9 significant digits survive exactly.
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.9g", g(rng));
            s.features.data()[k] = std::strtod(buf, nullptr);
        }
        data.sequences.push_back(s);
    }
    const auto path = write_feature_manifest(dir.path(), data);
    const auto back = load_feature_manifest(path);
    ASSERT_EQ(back.sequences.size(), 4u);
    EXPECT_EQ(back.classes, data.classes);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(back.sequences[i].features, data.sequences[i].features);
        EXPECT_EQ(back.sequences[i].label, data.sequences[i].label);
        EXPECT_EQ(back.sequences[i].region_id, data.sequences[i].region_id);
    }
}

TEST(FeatureManifest, DeclaredLengthMustMatch) {
    TempDir dir("manifest");
    write_region_csv(dir / "a.csv", 4, 3, 0.0);
    testing_support::spit(dir / "m.json", R"({"dim": 4, "regions": [{"id": "a", "label": 0, "m": 9, "file": "a.csv"}]})");
    EXPECT_THROW(load_feature_manifest(dir / "m.json"), DataError);
}
