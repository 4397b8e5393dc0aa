#include "alignedcut/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace alignedcut::kernels::omp {
namespace {

// Fixed summation order so a row's result never depends on scheduling.
inline double dot(const double* a, const double* b, Eigen::Index n) {
    double s = 0.0;
    for (Eigen::Index d = 0; d < n; ++d) s += a[d] * b[d];
    return s;
}

inline double squared_distance(const double* a, const double* b, Eigen::Index n) {
    double s = 0.0;
    for (Eigen::Index d = 0; d < n; ++d) {
        const double t = a[d] - b[d];
        s += t * t;
    }
    return s;
}

// Indices of the k largest values, ordered by (value desc, index asc).
void top_k(const std::vector<double>& values, std::size_t k, std::vector<std::uint32_t>& order) {
    order.resize(values.size());
    std::iota(order.begin(), order.end(), 0U);
    const auto better = [&](std::uint32_t a, std::uint32_t b) {
        return values[a] != values[b] ? values[a] > values[b] : a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
}

}  // namespace

RowMatrixXd unit_rows(const RowMatrixXd& x, bool* zero_norm) {
    RowMatrixXd out(x.rows(), x.cols());
    int zero = 0;
#pragma omp parallel for schedule(static) reduction(| : zero)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double n = std::sqrt(dot(x.row(i).data(), x.row(i).data(), x.cols()));
        if (n == 0.0) {
            out.row(i).setZero();
            zero = 1;
        } else {
            for (Eigen::Index d = 0; d < x.cols(); ++d) out(i, d) = x(i, d) / n;
        }
    }
    if (zero_norm) *zero_norm = zero != 0;
    return out;
}

RowMatrixXd cosine_rows(const RowMatrixXd& u, const RowMatrixXd& v, bool* zero_norm) {
    bool zu = false;
    bool zv = false;
    const RowMatrixXd un = unit_rows(u, &zu);
    const RowMatrixXd vn = unit_rows(v, &zv);
    RowMatrixXd out(u.rows(), v.rows());
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        for (Eigen::Index j = 0; j < v.rows(); ++j) {
            out(i, j) = std::clamp(dot(un.row(i).data(), vn.row(j).data(), un.cols()), -1.0, 1.0);
        }
    }
    if (zero_norm) *zero_norm = zu || zv;
    return out;
}

RowMatrixXd affinity(const RowMatrixXd& features) {
    const auto n = features.rows();
    const RowMatrixXd un = unit_rows(features, nullptr);
    RowMatrixXd a(n, n);
#pragma omp parallel for schedule(dynamic, 16)
    for (Eigen::Index i = 0; i < n; ++i) {
        const bool nonzero = un.row(i).squaredNorm() > 0.0;
        a(i, i) = nonzero ? 1.0 : std::exp(-1.0);
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double c = std::clamp(dot(un.row(i).data(), un.row(j).data(), un.cols()), -1.0, 1.0);
            a(i, j) = std::exp(c - 1.0);
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < i; ++j) a(i, j) = a(j, i);
    }
    return a;
}

KnnWeights knn_weights(const RowMatrixXd& queries, const RowMatrixXd& sub, std::size_t k, std::size_t block_rows) {
    KnnWeights out;
    out.k = k;
    const auto rows = static_cast<std::size_t>(queries.rows());
    out.indices.resize(rows * k);
    out.weights.resize(rows * k);
    const RowMatrixXd sub_unit = unit_rows(sub, nullptr);
    const auto m = static_cast<std::size_t>(sub.rows());
    const auto dim = queries.cols();
    block_rows = std::max<std::size_t>(block_rows, 1);

    for (std::size_t begin = 0; begin < rows; begin += block_rows) {
        const std::size_t end = std::min(rows, begin + block_rows);
        const RowMatrixXd block =
            unit_rows(queries.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)),
                      nullptr);
#pragma omp parallel
        {
            std::vector<double> cos(m);
            std::vector<std::uint32_t> order;
#pragma omp for schedule(static)
            for (std::size_t r = 0; r < end - begin; ++r) {
                const double* q = block.row(static_cast<Eigen::Index>(r)).data();
                for (std::size_t s = 0; s < m; ++s) {
                    cos[s] = std::clamp(dot(q, sub_unit.row(static_cast<Eigen::Index>(s)).data(), dim), -1.0, 1.0);
                }
                top_k(cos, k, order);
                double total = 0.0;
                const std::size_t base = (begin + r) * k;
                for (std::size_t t = 0; t < k; ++t) {
                    const double w = std::exp(cos[order[t]] - 1.0);
                    out.indices[base + t] = order[t];
                    out.weights[base + t] = w;
                    total += w;
                }
                for (std::size_t t = 0; t < k; ++t) out.weights[base + t] /= total;
            }
        }
    }
    return out;
}

RowMatrixXd knn_propagate(const RowMatrixXd& queries, const RowMatrixXd& sub, const RowMatrixXd& values,
                          std::size_t k, std::size_t block_rows) {
    const auto rows = static_cast<std::size_t>(queries.rows());
    const auto m = static_cast<std::size_t>(sub.rows());
    const auto dim = queries.cols();
    const auto width = values.cols();
    RowMatrixXd out = RowMatrixXd::Zero(queries.rows(), width);
    const RowMatrixXd sub_unit = unit_rows(sub, nullptr);
    block_rows = std::max<std::size_t>(block_rows, 1);

    for (std::size_t begin = 0; begin < rows; begin += block_rows) {
        const std::size_t end = std::min(rows, begin + block_rows);
        const RowMatrixXd block =
            unit_rows(queries.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)),
                      nullptr);
#pragma omp parallel
        {
            std::vector<double> cos(m);
            std::vector<double> w(k);
            std::vector<std::uint32_t> order;
#pragma omp for schedule(static)
            for (std::size_t r = 0; r < end - begin; ++r) {
                const double* q = block.row(static_cast<Eigen::Index>(r)).data();
                for (std::size_t s = 0; s < m; ++s) {
                    cos[s] = std::clamp(dot(q, sub_unit.row(static_cast<Eigen::Index>(s)).data(), dim), -1.0, 1.0);
                }
                top_k(cos, k, order);
                double total = 0.0;
                for (std::size_t t = 0; t < k; ++t) {
                    w[t] = std::exp(cos[order[t]] - 1.0);
                    total += w[t];
                }
                auto dst = out.row(static_cast<Eigen::Index>(begin + r));
                for (std::size_t t = 0; t < k; ++t) {
                    const double wt = w[t] / total;
                    const auto src = values.row(order[t]);
                    for (Eigen::Index c = 0; c < width; ++c) dst[c] += wt * src[c];
                }
            }
        }
    }
    return out;
}

RowMatrixXd squared_distances(const RowMatrixXd& points) {
    const auto n = points.rows();
    RowMatrixXd d(n, n);
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            d(i, j) = squared_distance(points.row(i).data(), points.row(j).data(), points.cols());
        }
    }
    return d;
}

TsneStep tsne_gradient(const RowMatrixXd& p, const RowMatrixXd& y, double exaggeration) {
    const auto n = y.rows();
    const auto dim = y.cols();
    std::vector<double> row_z(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) s += 1.0 / (1.0 + squared_distance(y.row(i).data(), y.row(j).data(), dim));
        }
        row_z[static_cast<std::size_t>(i)] = s;
    }
    double z = 0.0;
    for (double s : row_z) z += s;

    TsneStep step;
    step.gradient = RowMatrixXd::Zero(n, dim);
    std::vector<double> row_kl(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        double kl = 0.0;
        const double* yi = y.row(i).data();
        double* gi = step.gradient.row(i).data();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            const double* yj = y.row(j).data();
            const double num = 1.0 / (1.0 + squared_distance(yi, yj, dim));
            const double q = num / z;
            const double pij = p(i, j);
            const double mult = 4.0 * (exaggeration * pij - q) * num;
            for (Eigen::Index d = 0; d < dim; ++d) gi[d] += mult * (yi[d] - yj[d]);
            if (pij > 0.0) kl += pij * std::log(pij / std::max(q, 1e-300));
        }
        row_kl[static_cast<std::size_t>(i)] = kl;
    }
    for (double v : row_kl) step.kl += v;
    return step;
}

std::vector<std::uint32_t> nearest_center(const RowMatrixXd& points, const RowMatrixXd& centers,
                                          std::vector<double>* distance) {
    const auto n = points.rows();
    std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
    if (distance) distance->assign(labels.size(), 0.0);
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t arg = 0;
        for (Eigen::Index c = 0; c < centers.rows(); ++c) {
            const double d = squared_distance(points.row(i).data(), centers.row(c).data(), points.cols());
            if (d < best) {
                best = d;
                arg = static_cast<std::uint32_t>(c);
            }
        }
        labels[static_cast<std::size_t>(i)] = arg;
        if (distance) (*distance)[static_cast<std::size_t>(i)] = best;
    }
    return labels;
}

}  // namespace alignedcut::kernels::omp
