#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace alignedcut {

// Row-major storage throughout: nodes are rows and most kernels stream rows.
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorXd = Eigen::VectorXd;

using NodeId = std::uint64_t;

}  // namespace alignedcut
