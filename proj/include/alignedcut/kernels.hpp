#pragma once

// Data-parallel inner loops. Every kernel exists twice: a plain serial
// reference used as a test oracle, and the OpenMP version used by the library.
// OpenMP kernels split work over rows only and reduce in a fixed order, so
// their output does not depend on the thread count.

#include "alignedcut/types.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace alignedcut::kernels {

/// K nearest subsample rows of each query row and their normalized weights.
/// indices/weights are [rows x K] row-major.
struct KnnWeights {
    std::size_t k = 0;
    std::vector<std::uint32_t> indices;
    std::vector<double> weights;
};

struct TsneStep {
    RowMatrixXd gradient;
    double kl = 0.0;
};

namespace serial {

RowMatrixXd cosine_rows(const RowMatrixXd& u, const RowMatrixXd& v, bool* zero_norm);
RowMatrixXd affinity(const RowMatrixXd& features);
KnnWeights knn_weights(const RowMatrixXd& queries, const RowMatrixXd& sub, std::size_t k);
RowMatrixXd knn_propagate(const RowMatrixXd& queries, const RowMatrixXd& sub, const RowMatrixXd& values,
                          std::size_t k);
RowMatrixXd squared_distances(const RowMatrixXd& points);
TsneStep tsne_gradient(const RowMatrixXd& p, const RowMatrixXd& y, double exaggeration);
std::vector<std::uint32_t> nearest_center(const RowMatrixXd& points, const RowMatrixXd& centers,
                                          std::vector<double>* distance);

}  // namespace serial

namespace omp {

/// Returns each row scaled to unit norm; zero rows stay zero and set *zero_norm.
RowMatrixXd unit_rows(const RowMatrixXd& x, bool* zero_norm);

RowMatrixXd cosine_rows(const RowMatrixXd& u, const RowMatrixXd& v, bool* zero_norm);
RowMatrixXd affinity(const RowMatrixXd& features);

/// Streams query rows in blocks of block_rows; memory is O(block_rows * sub.rows()).
KnnWeights knn_weights(const RowMatrixXd& queries, const RowMatrixXd& sub, std::size_t k,
                       std::size_t block_rows = 8192);
RowMatrixXd knn_propagate(const RowMatrixXd& queries, const RowMatrixXd& sub, const RowMatrixXd& values,
                          std::size_t k, std::size_t block_rows = 8192);

RowMatrixXd squared_distances(const RowMatrixXd& points);
TsneStep tsne_gradient(const RowMatrixXd& p, const RowMatrixXd& y, double exaggeration);
std::vector<std::uint32_t> nearest_center(const RowMatrixXd& points, const RowMatrixXd& centers,
                                          std::vector<double>* distance);

}  // namespace omp

}  // namespace alignedcut::kernels
