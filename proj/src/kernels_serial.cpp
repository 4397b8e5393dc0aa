// Reference kernels: direct transcriptions of the formulas, no blocking and
// no threading. Used only as oracles for the OpenMP versions.

#include "alignedcut/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace alignedcut::kernels::serial {

RowMatrixXd cosine_rows(const RowMatrixXd& u, const RowMatrixXd& v, bool* zero_norm) {
    RowMatrixXd out(u.rows(), v.rows());
    bool zero = false;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        const double nu = u.row(i).norm();
        for (Eigen::Index j = 0; j < v.rows(); ++j) {
            const double nv = v.row(j).norm();
            if (nu == 0.0 || nv == 0.0) {
                zero = true;
                out(i, j) = 0.0;
                continue;
            }
            out(i, j) = std::clamp(u.row(i).dot(v.row(j)) / (nu * nv), -1.0, 1.0);
        }
    }
    if (zero_norm) *zero_norm = zero;
    return out;
}

RowMatrixXd affinity(const RowMatrixXd& features) {
    RowMatrixXd a = cosine_rows(features, features, nullptr);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        if (features.row(i).squaredNorm() > 0.0) a(i, i) = 1.0;
    }
    return (a.array() - 1.0).exp().matrix();
}

KnnWeights knn_weights(const RowMatrixXd& queries, const RowMatrixXd& sub, std::size_t k) {
    KnnWeights out;
    out.k = k;
    const RowMatrixXd cos = cosine_rows(queries, sub, nullptr);
    const auto m = static_cast<std::size_t>(sub.rows());
    std::vector<std::uint32_t> order(m);
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        std::iota(order.begin(), order.end(), 0U);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return cos(i, a) > cos(i, b); });
        double total = 0.0;
        std::vector<double> w(k);
        for (std::size_t r = 0; r < k; ++r) {
            w[r] = std::exp(cos(i, order[r]) - 1.0);
            total += w[r];
        }
        for (std::size_t r = 0; r < k; ++r) {
            out.indices.push_back(order[r]);
            out.weights.push_back(w[r] / total);
        }
    }
    return out;
}

RowMatrixXd knn_propagate(const RowMatrixXd& queries, const RowMatrixXd& sub, const RowMatrixXd& values,
                          std::size_t k) {
    const KnnWeights w = knn_weights(queries, sub, k);
    RowMatrixXd out = RowMatrixXd::Zero(queries.rows(), values.cols());
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
        for (std::size_t r = 0; r < k; ++r) {
            const auto idx = static_cast<std::size_t>(i) * k + r;
            out.row(i) += w.weights[idx] * values.row(w.indices[idx]);
        }
    }
    return out;
}

RowMatrixXd squared_distances(const RowMatrixXd& points) {
    const auto n = points.rows();
    RowMatrixXd d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) d(i, j) = (points.row(i) - points.row(j)).squaredNorm();
    }
    return d;
}

TsneStep tsne_gradient(const RowMatrixXd& p, const RowMatrixXd& y, double exaggeration) {
    const auto n = y.rows();
    RowMatrixXd num(n, n);
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
            z += num(i, j);
        }
    }
    TsneStep step;
    step.gradient = RowMatrixXd::Zero(n, y.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double q = num(i, j) / z;
            step.gradient.row(i) += 4.0 * (exaggeration * p(i, j) - q) * num(i, j) * (y.row(i) - y.row(j));
            if (p(i, j) > 0.0) step.kl += p(i, j) * std::log(p(i, j) / std::max(q, 1e-300));
        }
    }
    return step;
}

std::vector<std::uint32_t> nearest_center(const RowMatrixXd& points, const RowMatrixXd& centers,
                                          std::vector<double>* distance) {
    std::vector<std::uint32_t> labels(static_cast<std::size_t>(points.rows()));
    if (distance) distance->assign(labels.size(), 0.0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < centers.rows(); ++c) {
            const double d = (points.row(i) - centers.row(c)).squaredNorm();
            if (d < best) {
                best = d;
                labels[i] = static_cast<std::uint32_t>(c);
            }
        }
        if (distance) (*distance)[i] = best;
    }
    return labels;
}

}  // namespace alignedcut::kernels::serial
