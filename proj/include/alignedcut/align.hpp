#pragma once

#include "alignedcut/feature_store.hpp"
#include "alignedcut/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace alignedcut {

struct EntryKey {
    std::string model;
    int layer = 0;

    bool operator==(const EntryKey&) const = default;
};

/// Channel-align transforms into a shared space plus the linear brain encoder.
///
/// transforms[i] is [D_i x D'] and maps entry i of the matching FeatureSet;
/// encoder_weight is [D' x N] and encoder_bias has N elements.
struct AlignModel {
    std::vector<EntryKey> keys;
    std::vector<RowMatrixXd> transforms;
    std::size_t universal_dim = 0;
    RowMatrixXd encoder_weight;
    VectorXd encoder_bias;

    std::size_t voxel_count() const noexcept { return static_cast<std::size_t>(encoder_bias.size()); }
    std::size_t parameter_count() const noexcept;

    /// A model of identical shape with every parameter zero.
    AlignModel zeros_like() const;
};

/// Random init: W_i ~ N(0, 1/D_i), beta ~ N(0, 1/D'), bias 0.
AlignModel init_align_model(const FeatureSet& set, std::size_t universal_dim, std::size_t voxel_count,
                            std::uint64_t seed);

/// Throws ConfigError unless the model's entries, dims and finiteness match the set.
void check_model_matches(const AlignModel& model, const FeatureSet& set);

/// Flat parameter vector: transforms in entry order, then encoder weight, then bias.
std::vector<double> flatten_parameters(const AlignModel& model);
void unflatten_parameters(AlignModel& model, std::span<const double> params);

/// Entry i becomes V_i W_i, one [(n_images * P) x D'] matrix per entry.
std::vector<RowMatrixXd> align_features(const AlignModel& model, const FeatureSet& set);

/// avgpool_p((1/n) sum_i V_i W_i) beta + eps, one row per image.
RowMatrixXd predict_brain(const AlignModel& model, const FeatureSet& set);

/// B_i = V_i W_i beta per entry, [(n_images * P) x N] each.
std::vector<RowMatrixXd> brain_space_channels(const AlignModel& model, const FeatureSet& set);

/// ||X_b X_b^T - X_a X_a^T||_F^2.
double gram_discrepancy(const RowMatrixXd& before, const RowMatrixXd& after);

struct EigenConstraintResult {
    double loss = 0.0;
    RowMatrixXd grad_after;  ///< dL/d(features_after)
    bool degenerate = false;
};

/// Squared Frobenius distance between the Gram matrices of the top-c ncut
/// eigenvectors of the affinities of features_before and features_after.
/// Only features_after is differentiated; X_b is a constant target.
EigenConstraintResult eigen_constraint_loss(const RowMatrixXd& features_before, const RowMatrixXd& features_after,
                                            std::size_t c);

struct TrainConfig {
    double lambda_eigen = 0.0;
    std::size_t minibatch_images = 32;
    std::size_t eigen_nodes = 100;  ///< nodes per eigen-constraint sample
    std::size_t eigen_top = 6;      ///< eigenvectors compared
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::size_t steps = 10000;
    std::uint64_t seed = 0;
    std::size_t log_every = 1;

    void validate() const;
};

/// Nodes for one eigen-constraint term, drawn from a single entry.
/// rows index into the entry's (n_images * P) row space.
struct EigenSample {
    std::size_t entry = 0;
    std::vector<std::size_t> rows;
};

struct ObjectiveValue {
    double total = 0.0;
    double brain = 0.0;
    double eigen = 0.0;
    AlignModel gradient;
    bool degenerate = false;
};

/// L = L_brain + lambda * L_eigen with its gradient for a fixed minibatch.
/// L_brain is the mean squared error over (image, voxel) pairs.
class AlignObjective {
public:
    AlignObjective(const FeatureSet& set, const BrainTarget& target, double lambda_eigen, std::size_t eigen_top);

    ObjectiveValue evaluate(const AlignModel& model, std::span<const std::size_t> images,
                            std::span<const EigenSample> eigen_samples, bool want_gradient = true) const;

    /// Patch-averaged features per entry, [n_images x D_i].
    const std::vector<RowMatrixXd>& pooled() const noexcept { return pooled_; }

private:
    const FeatureSet* set_;
    const BrainTarget* target_;
    double lambda_;
    std::size_t eigen_top_;
    std::vector<RowMatrixXd> pooled_;
};

/// Draws eigen_nodes distinct rows of one entry, restricted to the given images.
EigenSample sample_eigen_nodes(const FeatureSet& set, std::size_t entry, std::span<const std::size_t> images,
                               std::size_t count, std::uint64_t seed);

struct LossRecord {
    std::size_t step = 0;
    double total = 0.0;
    double brain = 0.0;
    double eigen = 0.0;
};

struct TrainResult {
    AlignModel model;
    std::vector<LossRecord> history;
    bool degenerate_steps = false;  ///< some step used a broadened eigen gradient
};

/// Momentum SGD on L_brain + lambda * L_eigen. Minibatches are drawn without
/// replacement per epoch; eigen samples cycle through entries step by step.
/// Throws NumericError naming the step if the loss becomes non-finite.
TrainResult train(AlignModel model, const FeatureSet& set, const BrainTarget& target, const TrainConfig& cfg);

/// Mean L_eigen of a model over `batches` fresh eigen samples (one per entry each).
double heldout_eigen_loss(const AlignModel& model, const FeatureSet& set, const TrainConfig& cfg,
                          std::size_t batches, std::uint64_t seed);

/// Per-voxel R^2 = 1 - SS_res / SS_tot averaged over the ROI's voxels;
/// zero-variance voxels are skipped. roi may be "all".
double roi_r2(const RowMatrixXd& predictions, const BrainTarget& target, const std::string& roi);

void write_loss_history(const std::vector<LossRecord>& history, const std::filesystem::path& csv);

/// One ACFS container per parameter plus model.json describing the mapping.
/// extra is merged verbatim into model.json (training config, final losses).
void write_align_model(const AlignModel& model, const std::filesystem::path& dir, const std::string& extra_json = "{}");
AlignModel read_align_model(const std::filesystem::path& dir);

}  // namespace alignedcut
