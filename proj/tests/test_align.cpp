#include "alignedcut/align.hpp"
#include "alignedcut/error.hpp"
#include "alignedcut/numerics.hpp"
#include "alignedcut/spectral.hpp"
#include "alignedcut/synthetic.hpp"

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

using namespace alignedcut;
using testing_support::random_matrix;

namespace {

FeatureSet constant_set(const std::vector<std::vector<float>>& per_entry_rows, std::size_t n_images, std::size_t grid) {
    FeatureSet set;
    set.n_images = n_images;
    set.manifest.patch_h = grid;
    set.manifest.patch_w = grid;
    set.patch_count = grid * grid + 1;
    int layer = 0;
    for (const auto& row : per_entry_rows) {
        FeatureEntry e{"m", layer++, row.size(), {}};
        for (std::size_t r = 0; r < set.row_count(); ++r) e.tensor.insert(e.tensor.end(), row.begin(), row.end());
        set.entries.push_back(std::move(e));
    }
    return set;
}

FeatureSet random_set(std::vector<std::size_t> dims, std::size_t n_images, std::size_t grid, std::uint64_t seed) {
    FeatureSet set;
    set.n_images = n_images;
    set.manifest.patch_h = grid;
    set.manifest.patch_w = grid;
    set.patch_count = grid * grid + 1;
    int layer = 0;
    for (auto d : dims) {
        const RowMatrixXf v = random_matrix(static_cast<long>(set.row_count()), static_cast<long>(d), seed++).cast<float>();
        set.entries.push_back({"m", layer++, d, std::vector<float>(v.data(), v.data() + v.size())});
    }
    return set;
}

// Loss of L = ||Pb - Xa Xa^T||^2 from Jacobi eigenvectors of a naively built normalized affinity.
double oracle_eigen_loss(const RowMatrixXd& before, const RowMatrixXd& after, long c) {
    const auto top = [&](const RowMatrixXd& f) {
        const long m = f.rows();
        RowMatrixXd a(m, m);
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < m; ++j)
                a(i, j) = std::exp(f.row(i).dot(f.row(j)) / (f.row(i).norm() * f.row(j).norm()) - 1.0);
        const VectorXd d = a.rowwise().sum();
        RowMatrixXd n(m, m);
        for (long i = 0; i < m; ++i)
            for (long j = 0; j < m; ++j) n(i, j) = a(i, j) / std::sqrt(d[i] * d[j]);
        return RowMatrixXd(testing_support::jacobi_eigh(n).vectors.leftCols(c));
    };
    const RowMatrixXd xb = top(before);
    const RowMatrixXd xa = top(after);
    return (xb * xb.transpose() - xa * xa.transpose()).squaredNorm();
}

}  // namespace

TEST(AlignFeatures, IdentityZeroAndBasisRow) {
    const FeatureSet set = random_set({3}, 2, 2, 1);
    AlignModel model = init_align_model(set, 3, 2, 0);
    model.transforms[0] = RowMatrixXd::Identity(3, 3);
    const auto v = set.entries[0].rows(set.row_count()).cast<double>();
    EXPECT_EQ(align_features(model, set)[0], RowMatrixXd(v));
    model.transforms[0].setZero();
    EXPECT_EQ(align_features(model, set)[0].cwiseAbs().maxCoeff(), 0.0);

    const FeatureSet e1 = constant_set({{1.0f, 0.0f, 0.0f}}, 2, 2);
    AlignModel m2 = init_align_model(e1, 4, 2, 0);
    const RowMatrixXd first = m2.transforms[0].row(0);
    const RowMatrixXd out = align_features(m2, e1)[0];
    for (long r = 0; r < out.rows(); ++r) EXPECT_EQ(RowMatrixXd(out.row(r)), first);
}

TEST(AlignFeatures, IsLinearInTheFeatures) {
    FeatureSet a = random_set({5}, 3, 2, 2);
    const FeatureSet b = random_set({5}, 3, 2, 9);
    const AlignModel model = init_align_model(a, 3, 2, 4);
    const RowMatrixXd fa = align_features(model, a)[0];
    const RowMatrixXd fb = align_features(model, b)[0];
    for (std::size_t i = 0; i < a.entries[0].tensor.size(); ++i) {
        a.entries[0].tensor[i] = 2.5f * a.entries[0].tensor[i] + b.entries[0].tensor[i];
    }
    const RowMatrixXd mixed = align_features(model, a)[0];
    EXPECT_LE((mixed - (2.5 * fa + fb)).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(PredictBrain, ClosedFormCases) {
    const FeatureSet set = constant_set({{1.0f, -2.0f, 0.5f}}, 3, 2);
    AlignModel model = init_align_model(set, 3, 4, 7);
    model.transforms[0] = RowMatrixXd::Identity(3, 3);
    model.encoder_bias << 0.1, 0.2, 0.3, 0.4;
    Eigen::RowVector3d v(1.0, -2.0, 0.5);
    const RowMatrixXd pred = predict_brain(model, set);
    for (long r = 0; r < 3; ++r) {
        EXPECT_LE((pred.row(r) - (v * model.encoder_weight + model.encoder_bias.transpose())).cwiseAbs().maxCoeff(), 1e-12);
    }
    model.encoder_weight.setZero();
    for (long r = 0; r < 3; ++r) EXPECT_EQ(VectorXd(pred.row(r).transpose()).size(), 4);
    const RowMatrixXd bias_only = predict_brain(model, set);
    for (long r = 0; r < 3; ++r) EXPECT_EQ(VectorXd(bias_only.row(r).transpose()), model.encoder_bias);

    const FeatureSet pair = constant_set({{1.0f, 2.0f}, {-1.0f, -2.0f}}, 2, 1);
    AlignModel cancel = init_align_model(pair, 2, 3, 1);
    cancel.transforms = {RowMatrixXd::Identity(2, 2), RowMatrixXd::Identity(2, 2)};
    cancel.encoder_bias << 1, 2, 3;
    const RowMatrixXd c = predict_brain(cancel, pair);
    for (long r = 0; r < 2; ++r) EXPECT_LE((c.row(r).transpose() - cancel.encoder_bias).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BrainSpaceChannels, ReconstructPredictionAndSpecialCases) {
    const FeatureSet set = random_set({4, 6}, 3, 2, 3);
    AlignModel model = init_align_model(set, 5, 3, 3);
    model.encoder_bias << 0.5, -1, 2;
    const auto channels = brain_space_channels(model, set);
    RowMatrixXd pooled = RowMatrixXd::Zero(3, 3);
    for (const auto& b : channels) {
        for (long img = 0; img < 3; ++img) pooled.row(img) += b.middleRows(img * 5, 5).colwise().mean() / 2.0;
    }
    pooled.rowwise() += model.encoder_bias.transpose();
    EXPECT_LE((pooled - predict_brain(model, set)).cwiseAbs().maxCoeff(), 1e-5);

    AlignModel ones = init_align_model(set, 5, 1, 2);
    ones.encoder_weight.setOnes();
    const auto aligned = align_features(ones, set);
    const auto sums = brain_space_channels(ones, set);
    EXPECT_LE((sums[1].col(0) - aligned[1].rowwise().sum()).cwiseAbs().maxCoeff(), 1e-12);

    ones.encoder_weight.setZero();
    for (const auto& b : brain_space_channels(ones, set)) EXPECT_EQ(b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(EigenConstraint, ZeroWhenFeaturesUnchanged) {
    const RowMatrixXd f = random_matrix(20, 5, 1);
    const auto r = eigen_constraint_loss(f, f, 6);
    EXPECT_LE(r.loss, 1e-20);
    EXPECT_LE(r.grad_after.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(EigenConstraint, GramStageIsRotationInvariant) {
    const RowMatrixXd x = ncut_eigs(build_affinity(random_matrix(30, 4, 2)), 6).vectors;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const RowMatrixXd r = testing_support::random_orthogonal(6, seed);
        EXPECT_LE(gram_discrepancy(x, x * r), 1e-10);
        EXPECT_LE(gram_discrepancy(x * r, x), 1e-10);
    }
}

TEST(EigenConstraint, MergedClustersAnchorMatchesOracle) {
    RowMatrixXd before = random_matrix(20, 4, 5) * 0.1;
    for (long i = 0; i < 20; ++i) before(i, 0) += i < 10 ? 1.0 : -1.0;
    RowMatrixXd after = random_matrix(20, 4, 6) * 0.1;
    after.col(0).array() += 1.0;
    const auto r = eigen_constraint_loss(before, after, 3);
    EXPECT_GT(r.loss, 0.1);
    EXPECT_NEAR(r.loss, oracle_eigen_loss(before, after, 3), 1e-9);
}

TEST(EigenConstraint, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const RowMatrixXd before = random_matrix(12, 6, 40 + seed);
        const RowMatrixXd after = random_matrix(12, 4, 80 + seed);
        const auto r = eigen_constraint_loss(before, after, 3);
        ASSERT_FALSE(r.degenerate);
        const auto f = [&](std::span<const double> p) {
            const RowMatrixXd a = Eigen::Map<const RowMatrixXd>(p.data(), 12, 4);
            return eigen_constraint_loss(before, a, 3).loss;
        };
        const std::vector<double> point(after.data(), after.data() + after.size());
        const std::vector<double> grad(r.grad_after.data(), r.grad_after.data() + r.grad_after.size());
        EXPECT_LE(check_gradient(f, grad, point, 1e-6), 1e-3) << "seed " << seed;
    }
}

TEST(Objective, FullGradientMatchesFiniteDifferences) {
    const FeatureSet set = random_set({6, 8}, 4, 2, 11);
    BrainTarget target;
    target.responses = random_matrix(4, 3, 12);
    const AlignObjective objective(set, target, 1.0, 3);
    const std::vector<std::size_t> images{2, 0, 3};
    const std::vector<EigenSample> samples{sample_eigen_nodes(set, 0, images, 12, 1),
                                           sample_eigen_nodes(set, 1, images, 12, 2)};
    for (std::uint64_t point_seed = 0; point_seed < 3; ++point_seed) {
        AlignModel model = init_align_model(set, 4, 3, 100 + point_seed);
        model.encoder_bias = random_matrix(3, 1, 200 + point_seed).col(0);
        const ObjectiveValue v = objective.evaluate(model, images, samples);
        EXPECT_GT(v.eigen, 0.0);
        const auto f = [&](std::span<const double> p) {
            AlignModel m = model;
            unflatten_parameters(m, p);
            return objective.evaluate(m, images, samples, false).total;
        };
        const auto point = flatten_parameters(model);
        EXPECT_LE(check_gradient(f, flatten_parameters(v.gradient), point, 1e-6), 1e-3);
    }
}

TEST(Parameters, FlattenRoundTrip) {
    const FeatureSet set = random_set({2, 3}, 2, 1, 1);
    const AlignModel model = init_align_model(set, 2, 2, 5);
    EXPECT_EQ(flatten_parameters(model).size(), model.parameter_count());
    EXPECT_EQ(model.parameter_count(), 2u * 2 + 3 * 2 + 2 * 2 + 2);
    AlignModel copy = model.zeros_like();
    unflatten_parameters(copy, flatten_parameters(model));
    EXPECT_EQ(flatten_parameters(copy), flatten_parameters(model));
    EXPECT_THROW(unflatten_parameters(copy, std::vector<double>(3)), ConfigError);
}

TEST(Model, MismatchAndSerialization) {
    const FeatureSet set = random_set({2, 3}, 2, 1, 1);
    AlignModel model = init_align_model(set, 2, 2, 5);
    const FeatureSet other = random_set({2, 4}, 2, 1, 1);
    EXPECT_THROW(check_model_matches(model, other), ConfigError);

    testing_support::TempDir dir("model");
    write_align_model(model, dir.path(), R"({"steps": 3})");
    const AlignModel back = read_align_model(dir.path());
    EXPECT_NO_THROW(check_model_matches(back, set));
    const auto a = flatten_parameters(model);
    const auto b = flatten_parameters(back);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], static_cast<double>(static_cast<float>(a[i])));
    EXPECT_NE(testing_support::read_file(dir / "model.json").find("\"steps\": 3"), std::string::npos);
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.lambda_eigen = -0.1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.eigen_top = 101;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.momentum = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, DeterministicAndDecreasing) {
    SyntheticOptions o;
    o.entries = {{"a", 1, 6, false}, {"a", 2, 5, true}};
    o.voxel_count = 4;
    o.universal_dim = 3;
    const auto ds = make_synthetic_dataset(o);
    TrainConfig cfg;
    cfg.lambda_eigen = 0.5;
    cfg.eigen_nodes = 10;
    cfg.eigen_top = 3;
    cfg.minibatch_images = 3;
    cfg.learning_rate = 0.02;
    cfg.steps = 60;
    cfg.seed = 4;
    const AlignModel init = init_align_model(ds.features, 3, 4, 1);
    const TrainResult a = train(init, ds.features, ds.brain, cfg);
    const TrainResult b = train(init, ds.features, ds.brain, cfg);
    EXPECT_EQ(flatten_parameters(a.model), flatten_parameters(b.model));
    ASSERT_EQ(a.history.size(), 60u);
    EXPECT_GT(a.history.front().eigen, 0.0);
    const auto full_mse = [&](const AlignModel& m) {
        return (predict_brain(m, ds.features) - ds.brain.responses).squaredNorm() /
               static_cast<double>(ds.brain.responses.size());
    };
    EXPECT_LT(full_mse(a.model), 0.5 * full_mse(init));

    testing_support::TempDir dir("history");
    write_loss_history(a.history, dir / "h.csv");
    const std::string csv = testing_support::read_file(dir / "h.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,total,brain,eigen");
}

TEST(Train, DivergenceReportsTheStep) {
    SyntheticOptions o;
    o.entries = {{"a", 1, 4, false}};
    const auto ds = make_synthetic_dataset(o);
    TrainConfig cfg;
    cfg.learning_rate = 1e6;
    cfg.momentum = 0.0;
    cfg.steps = 500;
    try {
        train(init_align_model(ds.features, 4, o.voxel_count, 0), ds.features, ds.brain, cfg);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}

TEST(RoiR2, HandComputedCases) {
    BrainTarget t;
    t.responses.resize(4, 3);
    t.responses << 1, 1, 5, 2, 3, 5, 3, 2, 5, 4, 6, 5;
    t.rois = {{"mixed", {0, 1, 2}}, {"flat", {2}}};
    RowMatrixXd pred = t.responses;
    EXPECT_DOUBLE_EQ(roi_r2(pred, t, "all"), 1.0);
    const RowMatrixXd means = t.responses.colwise().mean().replicate(4, 1);
    EXPECT_NEAR(roi_r2(means, t, "all"), 0.0, 1e-15);
    // Voxel 0 exact, voxel 1 at its mean, voxel 2 constant and skipped.
    pred.col(1) = means.col(1);
    pred.col(2).setConstant(-7.0);
    EXPECT_DOUBLE_EQ(roi_r2(pred, t, "mixed"), 0.5);
    EXPECT_THROW(roi_r2(pred, t, "flat"), DataError);
    t.rois["none"] = {};
    EXPECT_THROW(roi_r2(pred, t, "none"), ConfigError);
    EXPECT_THROW(roi_r2(pred, t, "V1"), ConfigError);
}
