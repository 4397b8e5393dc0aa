#include "alignedcut/error.hpp"
#include "alignedcut/feature_store.hpp"
#include "alignedcut/tensor_file.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

using namespace alignedcut;
using testing_support::TempDir;

namespace {

FeatureEntry sequential_entry(const std::string& model, int layer, std::size_t n, std::size_t p, std::size_t d,
                              float offset = 0.0f) {
    FeatureEntry e{model, layer, d, {}};
    e.tensor.resize(n * p * d);
    for (std::size_t i = 0; i < e.tensor.size(); ++i) e.tensor[i] = offset + static_cast<float>(i);
    return e;
}

FeatureSet small_set() {
    FeatureSet set;
    set.n_images = 2;
    set.manifest.patch_h = 2;
    set.manifest.patch_w = 2;
    set.patch_count = 5;
    set.manifest.image_ids = {"a", "b"};
    set.entries.push_back(sequential_entry("clip", 0, 2, 5, 4));
    return set;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST(TensorFile, HeaderIsLittleEndianAcfs) {
    TempDir dir("tensor");
    write_tensor<float>(dir / "t.acfs", {{2, 3}, {1, 2, 3, 4, 5, 6}});
    const std::string bytes = testing_support::read_file(dir / "t.acfs");
    ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 2 * 8 + 6 * 4);
    EXPECT_EQ(bytes.substr(0, 4), "ACFS");
    const auto u8 = [&](std::size_t i) { return static_cast<unsigned char>(bytes[i]); };
    EXPECT_EQ(u8(4), 1);  // version
    EXPECT_EQ(u8(5) | u8(6) | u8(7), 0);
    EXPECT_EQ(u8(8), 2);  // rank
    EXPECT_EQ(u8(12), 2);  // extent 0
    EXPECT_EQ(u8(20), 3);  // extent 1
    // 1.0f little-endian is 00 00 80 3f
    EXPECT_EQ(u8(28), 0x00);
    EXPECT_EQ(u8(30), 0x80);
    EXPECT_EQ(u8(31), 0x3f);
}

TEST(TensorFile, RoundTripsEveryElementType) {
    TempDir dir("tensor");
    const Tensor<float> f{{2, 2}, {1.5f, -0.0f, std::numeric_limits<float>::denorm_min(), 3e38f}};
    write_tensor(dir / "f.acfs", f);
    const auto rf = read_tensor<float>(dir / "f.acfs");
    EXPECT_EQ(rf.shape, f.shape);
    EXPECT_EQ(std::memcmp(rf.data.data(), f.data.data(), f.data.size() * sizeof(float)), 0);

    const Tensor<std::uint16_t> u{{3}, {0, 65535, 7}};
    write_tensor(dir / "u.acfs", u);
    EXPECT_EQ(read_tensor<std::uint16_t>(dir / "u.acfs").data, u.data);

    const Tensor<std::uint8_t> b{{1, 3}, {0, 128, 255}};
    write_tensor(dir / "b.acfs", b);
    EXPECT_EQ(read_tensor<std::uint8_t>(dir / "b.acfs").data, b.data);
    EXPECT_EQ(read_tensor_shape(dir / "b.acfs"), (std::vector<std::uint64_t>{1, 3}));
}

TEST(TensorFile, RejectsBadMagicVersionAndSize) {
    TempDir dir("tensor");
    write_tensor<float>(dir / "ok.acfs", {{2}, {1, 2}});
    std::string bytes = testing_support::read_file(dir / "ok.acfs");

    std::string magic = bytes;
    magic[0] = 'X';
    write_bytes(dir / "magic.acfs", magic);
    EXPECT_THROW(read_tensor<float>(dir / "magic.acfs"), FormatError);

    std::string version = bytes;
    version[4] = 2;
    write_bytes(dir / "version.acfs", version);
    EXPECT_THROW(read_tensor<float>(dir / "version.acfs"), FormatError);

    write_bytes(dir / "short.acfs", bytes.substr(0, bytes.size() - 1));
    EXPECT_THROW(read_tensor<float>(dir / "short.acfs"), IntegrityError);
    write_bytes(dir / "long.acfs", bytes + "xxxx");
    EXPECT_THROW(read_tensor<float>(dir / "long.acfs"), IntegrityError);
    write_bytes(dir / "header.acfs", bytes.substr(0, 6));
    EXPECT_THROW(read_tensor<float>(dir / "header.acfs"), FormatError);
}

TEST(FeatureStore, ReadsSequentialSingleEntryStore) {
    TempDir dir("store");
    const FeatureSet set = small_set();
    write_feature_set(set, dir.path());
    const FeatureSet back = read_feature_set(dir.path());
    EXPECT_EQ(back.n_images, 2u);
    EXPECT_EQ(back.patch_count, 5u);
    ASSERT_EQ(back.entries.size(), 1u);
    EXPECT_EQ(back.entries[0].dim, 4u);
    for (std::size_t i = 0; i < 40; ++i) EXPECT_EQ(back.entries[0].tensor[i], static_cast<float>(i));
    EXPECT_EQ(back.manifest.image_ids, (std::vector<std::string>{"a", "b"}));
}

TEST(FeatureStore, RoundTripIsBitExact) {
    TempDir dir("store");
    FeatureSet set = small_set();
    set.entries.push_back(sequential_entry("dino", 3, 2, 5, 3, 0.1f));
    for (auto& v : set.entries[1].tensor) v = std::nextafter(v * 1e-7f, 1.0f);
    write_feature_set(set, dir.path());
    const FeatureSet back = read_feature_set(dir.path());
    ASSERT_EQ(back.entries.size(), set.entries.size());
    for (std::size_t e = 0; e < set.entries.size(); ++e) {
        EXPECT_EQ(back.entries[e].model, set.entries[e].model);
        EXPECT_EQ(back.entries[e].layer, set.entries[e].layer);
        ASSERT_EQ(back.entries[e].tensor.size(), set.entries[e].tensor.size());
        EXPECT_EQ(std::memcmp(back.entries[e].tensor.data(), set.entries[e].tensor.data(),
                              set.entries[e].tensor.size() * sizeof(float)),
                  0);
    }
}

TEST(FeatureStore, ManifestDimMismatchIsIntegrityError) {
    TempDir dir("store");
    write_feature_set(small_set(), dir.path());
    auto doc = nlohmann::json::parse(testing_support::read_file(dir / "manifest.json"));
    doc["entries"][0]["dim"] = 8;
    std::ofstream(dir / "manifest.json") << doc.dump();
    EXPECT_THROW(read_feature_set(dir.path()), IntegrityError);
}

TEST(FeatureStore, EntriesAreSortedByModelThenLayer) {
    TempDir dir("store");
    FeatureSet set = small_set();
    set.entries = {sequential_entry("clip", 4, 2, 5, 4), sequential_entry("clip", 9, 2, 5, 4, 100.0f)};
    write_feature_set(set, dir.path());
    // Rewrite the manifest listing layer 9 before layer 4.
    auto doc = nlohmann::json::parse(testing_support::read_file(dir / "manifest.json"));
    std::swap(doc["entries"][0], doc["entries"][1]);
    EXPECT_EQ(doc["entries"][0]["layer"], 9);
    std::ofstream(dir / "manifest.json") << doc.dump();
    const FeatureSet back = read_feature_set(dir.path());
    EXPECT_EQ(back.entries[0].layer, 4);
    EXPECT_EQ(back.entries[1].layer, 9);
    EXPECT_EQ(back.entries[1].tensor[0], 100.0f);
}

TEST(FeatureStore, RejectsInvalidSetsBeforeWriting) {
    TempDir dir("store");
    FeatureSet nan = small_set();
    nan.entries[0].tensor[7] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(write_feature_set(nan, dir / "nan"), DataError);
    EXPECT_FALSE(std::filesystem::exists(dir / "nan" / "manifest.json"));

    FeatureSet inf = small_set();
    inf.entries[0].tensor[0] = std::numeric_limits<float>::infinity();
    EXPECT_THROW(validate_feature_set(inf), DataError);

    FeatureSet empty = small_set();
    empty.entries.clear();
    EXPECT_THROW(write_feature_set(empty, dir / "empty"), ConfigError);

    FeatureSet dup = small_set();
    dup.entries.push_back(dup.entries[0]);
    EXPECT_THROW(validate_feature_set(dup), IntegrityError);

    FeatureSet unsorted = small_set();
    unsorted.entries.insert(unsorted.entries.begin(), sequential_entry("zeta", 0, 2, 5, 4));
    EXPECT_THROW(validate_feature_set(unsorted), IntegrityError);

    FeatureSet short_tensor = small_set();
    short_tensor.entries[0].tensor.pop_back();
    EXPECT_THROW(validate_feature_set(short_tensor), IntegrityError);

    FeatureSet bad_grid = small_set();
    bad_grid.patch_count = 4;
    EXPECT_THROW(validate_feature_set(bad_grid), IntegrityError);
}

TEST(FeatureStore, FindEntry) {
    const FeatureSet set = small_set();
    EXPECT_EQ(set.find_entry("clip", 0), 0u);
    EXPECT_THROW(set.find_entry("clip", 1), ConfigError);
}

TEST(BrainTarget, RoundTripAndRoiChecks) {
    TempDir dir("brain");
    BrainTarget t;
    t.responses = testing_support::random_matrix(3, 4, 1).cast<float>().cast<double>();
    t.rois = {{"V1", {0, 1}}, {"V4", {1, 3}}};
    write_brain_target(t, dir / "brain.acfs", dir / "rois.json");
    const BrainTarget back = read_brain_target(dir / "brain.acfs", dir / "rois.json");
    EXPECT_EQ(back.responses, t.responses);
    EXPECT_EQ(back.rois, t.rois);
    EXPECT_EQ(back.roi_voxels("all"), (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_EQ(back.roi_voxels("V4"), (std::vector<std::size_t>{1, 3}));
    EXPECT_THROW(back.roi_voxels("EBA"), ConfigError);

    BrainTarget bad = t;
    bad.rois["V1"].push_back(4);
    EXPECT_THROW(validate_brain_target(bad), IntegrityError);
    bad = t;
    bad.responses(0, 0) = std::nan("");
    EXPECT_THROW(validate_brain_target(bad), DataError);
}

TEST(LabelMasks, RoundTripInferAndIgnore) {
    TempDir dir("labels");
    LabelMasks l;
    l.n_images = 1;
    l.height = 2;
    l.width = 2;
    l.masks = {0, 3, kDefaultIgnoreIndex, 1};
    l.class_count = 4;
    write_label_masks(l, dir / "l.acfs");
    const LabelMasks back = read_label_masks(dir / "l.acfs");
    EXPECT_EQ(back.class_count, 4u);  // inferred from the largest non-ignore value
    EXPECT_EQ(back.ignore_index, 65535);
    EXPECT_EQ(back.masks, l.masks);
    EXPECT_EQ(back.at(0, 1), 3);
    EXPECT_THROW(read_label_masks(dir / "l.acfs", 3), DataError);
}

TEST(FlattenNodes, CountsAndOrdering) {
    FeatureSet set;
    set.n_images = 2;
    set.manifest.patch_h = 1;
    set.manifest.patch_w = 2;
    set.patch_count = 3;
    set.entries = {sequential_entry("a", 0, 2, 3, 2), sequential_entry("a", 1, 2, 3, 2), sequential_entry("b", 0, 2, 3, 2)};
    const NodeTable t = flatten_nodes(set, {2, 0});
    EXPECT_EQ(t.size(), 12u);
    const NodeRef first = t.resolve(0);
    EXPECT_EQ(first.image, 0u);
    EXPECT_EQ(first.patch, 0u);
    EXPECT_EQ(first.entry, 2u);
    EXPECT_EQ(t.resolve(1).entry, 0u);
    EXPECT_EQ(t.resolve(2).patch, 1u);
    EXPECT_EQ(t.resolve(6).image, 1u);
    EXPECT_THROW(t.resolve(12), ConfigError);
    EXPECT_THROW(flatten_nodes(set, {}), ConfigError);
    EXPECT_THROW(flatten_nodes(set, {3}), ConfigError);
}

TEST(FlattenNodes, IsABijection) {
    FeatureSet set;
    set.n_images = 3;
    set.manifest.patch_h = 2;
    set.manifest.patch_w = 2;
    set.patch_count = 5;
    set.entries = {sequential_entry("a", 0, 3, 5, 1), sequential_entry("a", 1, 3, 5, 1), sequential_entry("a", 2, 3, 5, 1)};
    const NodeTable t = flatten_nodes(set, {0, 1, 2});
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
    for (NodeId id = 0; id < t.size(); ++id) {
        const NodeRef r = t.resolve(id);
        EXPECT_TRUE(seen.emplace(r.image, r.patch, r.entry).second);
        EXPECT_EQ(t.id_of(r.image, r.patch, r.entry), id);  // selection is the identity here
    }
    EXPECT_EQ(seen.size(), 45u);
}

TEST(FlattenNodes, PaperScaleCount) {
    EXPECT_EQ(node_count(1000, 197, 36), 7092000u);
}
