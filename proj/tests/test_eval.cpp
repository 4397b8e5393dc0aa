#include "alignedcut/eval.hpp"
#include "alignedcut/error.hpp"
#include "alignedcut/synthetic.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace alignedcut;
using testing_support::random_matrix;

namespace {

LabelMasks masks(std::vector<std::uint16_t> values, std::size_t h, std::size_t w) {
    LabelMasks l;
    l.n_images = values.size() / (h * w);
    l.height = h;
    l.width = w;
    l.masks = std::move(values);
    return l;
}

// Fraction of points whose label matches under the best relabeling (brute force).
double best_agreement(const std::vector<std::uint32_t>& got, const std::vector<std::uint32_t>& truth, std::uint32_t k) {
    std::vector<std::uint32_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0u);
    double best = 0.0;
    do {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < got.size(); ++i) hits += perm[got[i]] == truth[i];
        best = std::max(best, static_cast<double>(hits) / static_cast<double>(got.size()));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

double brute_force_best(const RowMatrixXd& score) {
    const auto rows = score.rows();
    const auto cols = score.cols();
    const long n = std::max(rows, cols);
    std::vector<long> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0L);
    double best = -std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (long r = 0; r < rows; ++r) {
            if (perm[static_cast<std::size_t>(r)] < cols) total += score(r, perm[static_cast<std::size_t>(r)]);
        }
        best = std::max(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace

TEST(KMeans, SeparatedBlocksSplitPerfectly) {
    RowMatrixXd x(40, 3);
    for (long i = 0; i < 40; ++i) x.row(i) = i < 20 ? Eigen::RowVector3d(1, 0, 0) : Eigen::RowVector3d(0, 1, 0);
    const auto labels = discretize(x, 2, 3);
    std::vector<std::uint32_t> truth(40);
    for (std::size_t i = 0; i < 40; ++i) truth[i] = i < 20 ? 0u : 1u;
    EXPECT_EQ(best_agreement(labels, truth, 2), 1.0);
}

TEST(KMeans, IdenticalRowsAreDegenerate) {
    const RowMatrixXd x = RowMatrixXd::Constant(10, 4, 0.3);
    EXPECT_THROW(discretize(x, 2, 0), NumericError);
    EXPECT_THROW(discretize(x, 1, 0), ConfigError);
}

TEST(KMeans, ThreeBlobsRecovered) {
    std::mt19937_64 gen(0);
    std::normal_distribution<double> noise(0.0, 0.3);
    const double centers[3][2] = {{0, 0}, {5, 0}, {0, 5}};
    RowMatrixXd x(300, 2);
    std::vector<std::uint32_t> truth(300);
    for (long i = 0; i < 300; ++i) {
        truth[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i % 3);
        x(i, 0) = centers[i % 3][0] + noise(gen);
        x(i, 1) = centers[i % 3][1] + noise(gen);
    }
    KMeansOptions o;
    o.seed = 0;
    const auto r = kmeans(x, 3, o);
    EXPECT_GE(best_agreement(r.labels, truth, 3), 0.99);
    EXPECT_EQ(r.labels, kmeans(x, 3, o).labels);
    double inertia = 0.0;
    for (long i = 0; i < 300; ++i) inertia += (x.row(i) - r.centers.row(r.labels[static_cast<std::size_t>(i)])).squaredNorm();
    EXPECT_NEAR(r.inertia, inertia, 1e-9 * inertia);
}

TEST(KMeans, MoreRestartsNeverWorse) {
    const RowMatrixXd x = random_matrix(120, 4, 2);
    KMeansOptions one;
    one.restarts = 1;
    KMeansOptions ten;
    EXPECT_LE(kmeans(x, 5, ten).inertia, kmeans(x, 5, one).inertia);
}

TEST(Miou, IdentityIsOne) {
    const auto l = masks({0, 1, 1, 0, 2, 2, 0, 1}, 2, 2);
    const std::vector<std::uint32_t> a{0, 1, 1, 0, 2, 2, 0, 1};
    EXPECT_DOUBLE_EQ(miou(a, l, Matching::majority).miou, 1.0);
    EXPECT_DOUBLE_EQ(miou(a, l, Matching::hungarian).miou, 1.0);
}

TEST(Miou, ThreeOfFourPixelsHandCase) {
    // Cluster 0 = {p0, p1, p2} maps to class 0 (IoU 2/3), cluster 1 = {p3} to class 1 (IoU 1/2).
    const auto l = masks({0, 0, 1, 1}, 2, 2);
    const std::vector<std::uint32_t> a{0, 0, 0, 1};
    const auto r = miou(a, l, Matching::majority);
    EXPECT_DOUBLE_EQ(r.class_iou[0], 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.class_iou[1], 0.5);
    EXPECT_DOUBLE_EQ(r.miou, 7.0 / 12.0);
}

TEST(Miou, SingleClusterIsQuarter) {
    const auto l = masks({0, 0, 1, 1}, 2, 2);
    const std::vector<std::uint32_t> a{0, 0, 0, 0};
    EXPECT_DOUBLE_EQ(miou(a, l, Matching::majority).miou, 0.25);
}

TEST(Miou, IgnoredPixelsAndAbsentClasses) {
    auto l = masks({0, kDefaultIgnoreIndex, 1, 1}, 2, 2);
    l.class_count = 3;
    const std::vector<std::uint32_t> a{0, 0, 1, 1};
    const auto r = miou(a, l, Matching::majority);
    EXPECT_DOUBLE_EQ(r.miou, 1.0);
    EXPECT_TRUE(std::isnan(r.class_iou[2]));
    const auto all = masks(std::vector<std::uint16_t>(4, kDefaultIgnoreIndex), 2, 2);
    EXPECT_THROW(miou(a, all, Matching::majority), DataError);
}

TEST(Miou, InvariantUnderClusterRelabeling) {
    std::mt19937_64 gen(4);
    std::vector<std::uint16_t> truth(400);
    std::vector<std::uint32_t> pred(400);
    for (std::size_t i = 0; i < 400; ++i) {
        truth[i] = static_cast<std::uint16_t>(gen() % 3);
        pred[i] = gen() % 5 == 0 ? static_cast<std::uint32_t>(gen() % 4) : truth[i];
    }
    const auto l = masks(truth, 10, 10);
    std::vector<std::uint32_t> relabel{2, 3, 0, 1};
    std::vector<std::uint32_t> permuted(400);
    for (std::size_t i = 0; i < 400; ++i) permuted[i] = relabel[pred[i]];
    for (auto m : {Matching::majority, Matching::hungarian}) {
        const double a = miou(pred, l, m).miou;
        EXPECT_NEAR(miou(permuted, l, m).miou, a, 1e-12);
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
}

TEST(Miou, MatchingsAgreeUnderBijection) {
    std::mt19937_64 gen(5);
    std::vector<std::uint16_t> truth(300);
    std::vector<std::uint32_t> pred(300);
    const std::uint32_t shuffle[3] = {1, 2, 0};
    for (std::size_t i = 0; i < 300; ++i) {
        truth[i] = static_cast<std::uint16_t>(i % 3);
        pred[i] = shuffle[gen() % 10 == 0 ? (truth[i] + 1) % 3 : truth[i]];
    }
    const auto l = masks(truth, 10, 10);
    EXPECT_DOUBLE_EQ(miou(pred, l, Matching::majority).miou, miou(pred, l, Matching::hungarian).miou);
}

TEST(Hungarian, MatchesBruteForce) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const long rows = 2 + static_cast<long>(seed % 4);
        const long cols = 2 + static_cast<long>((seed / 4) % 4);
        const RowMatrixXd s = random_matrix(rows, cols, seed);
        const auto assign = hungarian_max(s);
        double total = 0.0;
        std::vector<bool> used(static_cast<std::size_t>(cols), false);
        std::size_t matched = 0;
        for (long r = 0; r < rows; ++r) {
            const auto c = assign[static_cast<std::size_t>(r)];
            if (c < 0) continue;
            ASSERT_LT(c, cols);
            ASSERT_FALSE(used[static_cast<std::size_t>(c)]);
            used[static_cast<std::size_t>(c)] = true;
            total += s(r, c);
            ++matched;
        }
        EXPECT_EQ(matched, static_cast<std::size_t>(std::min(rows, cols)));
        EXPECT_NEAR(total, brute_force_best(s), 1e-12) << rows << "x" << cols;
    }
}

TEST(LayerSweep, PeaksAtTheLabelEncodingLayer) {
    SyntheticOptions o;
    o.n_images = 6;
    o.patch_h = 4;
    o.patch_w = 4;
    o.entries = {{"v", 1, 8, false}, {"v", 2, 8, true}, {"v", 3, 8, false}};
    const auto ds = make_synthetic_dataset(o);
    SweepConfig cfg;
    cfg.nystrom.sample_count = 48;
    cfg.nystrom.knn = 6;
    cfg.nystrom.eigen_count = 4;
    const auto rows = layer_sweep(ds.features, nullptr, ds.labels, cfg);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_GT(rows[1].miou, rows[0].miou);
    EXPECT_GT(rows[1].miou, rows[2].miou);
    EXPECT_EQ(rows[1].miou, 1.0);

    testing_support::TempDir dir("sweep");
    write_sweep_csv(rows, dir / "sweep.csv");
    const std::string csv = testing_support::read_file(dir / "sweep.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,model,dataset,n_clusters,matching,mIoU");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(LayerSweep, RejectsLabelsAtTheWrongResolution) {
    SyntheticOptions o;
    o.entries = {{"v", 1, 4, true}};
    auto ds = make_synthetic_dataset(o);
    SweepConfig cfg;
    cfg.nystrom.sample_count = 32;
    cfg.nystrom.knn = 4;
    cfg.nystrom.eigen_count = 3;
    EXPECT_NO_THROW(layer_sweep(ds.features, nullptr, ds.labels, cfg));
    ds.labels.height = 8;
    ds.labels.masks.resize(ds.labels.n_images * 8 * ds.labels.width);
    EXPECT_THROW(layer_sweep(ds.features, nullptr, ds.labels, cfg), ConfigError);
}

TEST(SpatialRows, DropsTheClassToken) {
    RowMatrixXd rows(6, 1);
    rows << 0, 1, 2, 10, 11, 12;
    const RowMatrixXd s = spatial_rows(rows, 2, 3);
    RowMatrixXd want(4, 1);
    want << 1, 2, 11, 12;
    EXPECT_EQ(s, want);
}
