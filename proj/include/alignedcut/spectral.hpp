#pragma once

#include "alignedcut/numerics.hpp"
#include "alignedcut/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace alignedcut {

/// Dense affinity A_ij = exp(cos(f_i, f_j) - 1) and its degree vector.
struct AffinityMatrix {
    RowMatrixXd values;
    VectorXd degree;
};

/// Throws DataError on non-finite features and ConfigError for fewer than two rows.
AffinityMatrix build_affinity(const RowMatrixXd& features);

/// Symmetrically normalized affinity D^-1/2 A D^-1/2.
RowMatrixXd normalized_affinity(const AffinityMatrix& a);

/// Top-C eigenbasis of D^-1/2 A D^-1/2.
EigenBasis ncut_eigs(const AffinityMatrix& a, std::size_t c, EigenMode mode = EigenMode::dense,
                     const LanczosOptions& options = {});

/// m distinct ids drawn uniformly without replacement from [0, M), sorted.
std::vector<NodeId> subsample_nodes(std::uint64_t total, std::uint64_t count, std::uint64_t seed);

/// Stratified alternative: each group (groups[i] is node i's stratum) gets a
/// share of the sample proportional to its size, largest remainders first.
std::vector<NodeId> subsample_nodes_stratified(std::span<const std::uint32_t> groups, std::uint64_t count,
                                               std::uint64_t seed);

/// X~_i = sum_{k in KNN_i} A_ki X'_k / sum_{k in KNN_i} A_ki, with KNN over
/// subsample rows by affinity. Ties go to the lower subsample index.
RowMatrixXd propagate_eigenvectors(const RowMatrixXd& full_features, const RowMatrixXd& sub_features,
                                   const EigenBasis& sub_basis, std::size_t k, std::size_t block_rows = 8192);

enum class SubsampleStrategy { uniform, stratified };

struct NystromOptions {
    std::size_t sample_count = 0;  ///< m
    std::size_t knn = 0;           ///< K
    std::size_t eigen_count = 0;   ///< C
    std::uint64_t seed = 0;
    std::size_t block_rows = 8192;
    EigenMode mode = EigenMode::dense;
    SubsampleStrategy strategy = SubsampleStrategy::uniform;
    std::vector<std::uint32_t> strata;  ///< per-node group, stratified strategy only
};

struct NystromResult {
    std::vector<NodeId> subsample_indices;
    EigenBasis sub_basis;
    RowMatrixXd full_approx;  ///< [M x C]
    std::size_t knn_k = 0;
    std::uint64_t seed = 0;
};

/// Checks m <= M, K <= m, C <= m and that nothing is zero; throws ConfigError.
void validate_nystrom(std::uint64_t total, const NystromOptions& options);

/// subsample -> affinity on the subsample -> ncut eigenvectors -> KNN propagation.
NystromResult nystrom_ncut(const RowMatrixXd& full_features, const NystromOptions& options);

/// Writes <stem>.acfs ([M x C] f32) and <stem>.json (m, K, C, seed, indices, eigenvalues).
void write_nystrom_result(const NystromResult& result, const std::filesystem::path& stem);
NystromResult read_nystrom_result(const std::filesystem::path& stem);

}  // namespace alignedcut
