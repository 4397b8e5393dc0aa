#include "alignedcut/embed.hpp"
#include "alignedcut/error.hpp"
#include "alignedcut/rng.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace alignedcut;
using testing_support::random_matrix;

namespace {

TsneConfig small_config(std::size_t out_dim, double perplexity) {
    TsneConfig cfg;
    cfg.out_dim = out_dim;
    cfg.perplexity = perplexity;
    cfg.seed = 3;
    return cfg;
}

double min_between(const RowMatrixXd& y, long split) {
    double best = std::numeric_limits<double>::infinity();
    for (long i = 0; i < split; ++i)
        for (long j = split; j < y.rows(); ++j) best = std::min(best, (y.row(i) - y.row(j)).norm());
    return best;
}

double max_within(const RowMatrixXd& y, long begin, long end) {
    double worst = 0.0;
    for (long i = begin; i < end; ++i)
        for (long j = i + 1; j < end; ++j) worst = std::max(worst, (y.row(i) - y.row(j)).norm());
    return worst;
}

}  // namespace

TEST(Tsne, ConditionalRowsAreDistributions) {
    const RowMatrixXd p = tsne_conditional_probabilities(random_matrix(40, 5, 1), 8.0);
    for (long i = 0; i < p.rows(); ++i) {
        EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
        EXPECT_EQ(p(i, i), 0.0);
        double entropy = 0.0;
        for (long j = 0; j < p.cols(); ++j)
            if (p(i, j) > 0) entropy -= p(i, j) * std::log(p(i, j));
        EXPECT_NEAR(std::exp(entropy), 8.0, 1e-3);
    }
}

TEST(Tsne, SeparatedClustersStaySeparated) {
    RowMatrixXd x = random_matrix(20, 5, 0) * 0.1;
    x.topRows(10).col(0).array() += 10.0;
    for (std::size_t dim : {2u, 3u}) {
        const auto r = tsne(x, small_config(dim, 5.0));
        EXPECT_GT(min_between(r.coords, 10), std::max(max_within(r.coords, 0, 10), max_within(r.coords, 10, 20)));
    }
}

TEST(Tsne, KlDecreases) {
    const auto r = tsne(random_matrix(50, 2, 4) * 0.01, small_config(2, 10.0));
    EXPECT_LT(r.kl, r.kl_initial);
    EXPECT_TRUE(r.coords.allFinite());
}

TEST(Tsne, SimplexDistancesWithinFactorTwo) {
    const RowMatrixXd x = RowMatrixXd::Identity(4, 4);
    const TsneConfig cfg = small_config(3, 0.9);
    const auto r = tsne(x, cfg);
    std::vector<double> d;
    for (long i = 0; i < 4; ++i)
        for (long j = i + 1; j < 4; ++j) d.push_back((r.coords.row(i) - r.coords.row(j)).norm());
    EXPECT_LE(*std::max_element(d.begin(), d.end()), 2.0 * *std::min_element(d.begin(), d.end()));
}

TEST(Tsne, PermutationInvariantKl) {
    const RowMatrixXd x = random_matrix(45, 6, 5);
    std::vector<long> perm(45);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 gen(9);
    std::shuffle(perm.begin(), perm.end(), gen);
    RowMatrixXd xp(45, 6);
    for (long i = 0; i < 45; ++i) xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    const auto cfg = small_config(3, 10.0);
    const auto a = tsne(x, cfg);
    const auto b = tsne(xp, cfg);
    EXPECT_NEAR(a.kl, b.kl, 1e-6);
    for (long i = 0; i < 45; ++i) {
        EXPECT_EQ(RowMatrixXd(b.coords.row(i)), RowMatrixXd(a.coords.row(perm[static_cast<std::size_t>(i)])));
    }
}

TEST(Tsne, DeterministicForFixedSeed) {
    const RowMatrixXd x = random_matrix(30, 4, 6);
    const auto cfg = small_config(3, 5.0);
    EXPECT_EQ(tsne(x, cfg).coords, tsne(x, cfg).coords);
}

TEST(Tsne, DuplicatesAndBadPerplexity) {
    RowMatrixXd x = RowMatrixXd::Zero(20, 3);
    x(0, 0) = 1.0;
    try {
        tsne(x, small_config(2, 5.0));
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("point 1:"), std::string::npos) << e.what();
    }
    EXPECT_THROW(tsne(random_matrix(10, 3, 1), small_config(2, 5.0)), ConfigError);
}

TEST(RgbCube, CubeCornersMapToCorners) {
    RowMatrixXd corners(8, 3);
    for (long i = 0; i < 8; ++i) corners.row(i) << (i & 1), (i >> 1) & 1, (i >> 2) & 1;
    const auto rgb = rgb_cube(corners);
    for (long i = 0; i < 8; ++i)
        for (long c = 0; c < 3; ++c) EXPECT_EQ(rgb[static_cast<std::size_t>(i * 3 + c)], corners(i, c) * 255);
}

TEST(RgbCube, ConstantChannelAndTwoPoints) {
    RowMatrixXd y(5, 3);
    y << 0, 2, 1, 1, 2, 2, 2, 2, 3, 3, 2, 4, 4, 2, 5;
    const auto rgb = rgb_cube(y);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(rgb[i * 3 + 1], 128);

    RowMatrixXd two(2, 3);
    two << -1, 5, 0, 3, -5, 0.5;
    const auto t = rgb_cube(two);
    EXPECT_EQ(std::vector<std::uint8_t>(t.begin(), t.end()), (std::vector<std::uint8_t>{0, 255, 0, 255, 0, 255}));
}

TEST(RgbCube, MonotoneInEachChannel) {
    const RowMatrixXd y = random_matrix(200, 3, 7);
    const auto rgb = rgb_cube(y);
    for (long c = 0; c < 3; ++c)
        for (long i = 0; i < 200; ++i)
            for (long j = 0; j < 200; ++j)
                if (y(i, c) < y(j, c)) {
                    ASSERT_LE(rgb[static_cast<std::size_t>(i * 3 + c)], rgb[static_cast<std::size_t>(j * 3 + c)]);
                }
    EXPECT_THROW(rgb_cube(random_matrix(4, 2, 1)), ConfigError);
}

TEST(Interpolate, SampledPointsKeepCoordinates) {
    const RowMatrixXd eig = random_matrix(50, 4, 8);
    const std::vector<NodeId> sample{3, 10, 11, 20, 42};
    const RowMatrixXd coords = random_matrix(5, 3, 9);
    const RowMatrixXd out = interpolate_coords(eig, sample, coords, 3);
    ASSERT_EQ(out.rows(), 50);
    for (std::size_t i = 0; i < sample.size(); ++i) EXPECT_EQ(RowMatrixXd(out.row(static_cast<long>(sample[i]))), RowMatrixXd(coords.row(static_cast<long>(i))));
    const VectorXd lo = coords.colwise().minCoeff();
    const VectorXd hi = coords.colwise().maxCoeff();
    for (long i = 0; i < 50; ++i)
        for (long c = 0; c < 3; ++c) {
            EXPECT_GE(out(i, c), lo[c] - 1e-12);
            EXPECT_LE(out(i, c), hi[c] + 1e-12);
        }
}

TEST(ColorMap, RoundTripAndPpm) {
    testing_support::TempDir dir("color");
    ColorMap map;
    map.coords = random_matrix(6, 3, 1);
    map.rgb = rgb_cube(map.coords);
    write_color_map(map, dir / "color");
    const ColorMap back = read_color_map(dir / "color");
    EXPECT_EQ(back.rgb, map.rgb);
    EXPECT_LE((back.coords - map.coords.cast<float>().cast<double>()).cwiseAbs().maxCoeff(), 0.0);

    write_ppm(dir / "img.ppm", 3, 2, map.rgb);
    const std::string bytes = testing_support::read_file(dir / "img.ppm");
    EXPECT_EQ(bytes.substr(0, 11), "P6\n3 2\n255\n");
    EXPECT_EQ(bytes.size(), 11u + 18u);
    EXPECT_THROW(write_ppm(dir / "bad.ppm", 2, 2, map.rgb), ConfigError);
}
