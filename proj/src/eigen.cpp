#include "alignedcut/error.hpp"
#include "alignedcut/kernels.hpp"
#include "alignedcut/numerics.hpp"
#include "alignedcut/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace alignedcut {

void apply_sign_convention(RowMatrixXd& vectors) {
    for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
            const double a = std::abs(vectors(r, c));
            if (a > best) {
                best = a;
                arg = r;
            }
        }
        if (vectors.rows() > 0 && vectors(arg, c) < 0.0) vectors.col(c) *= -1.0;
    }
}

namespace {

void check_symmetric(const RowMatrixXd& s) {
    if (s.rows() != s.cols()) throw ConfigError("matrix is not square");
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < s.cols(); ++j) {
            if (std::abs(s(i, j) - s(j, i)) > 1e-10 * scale) {
                throw ConfigError("matrix is not symmetric at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
            }
        }
    }
    if (!s.allFinite()) throw DataError("matrix has non-finite entries");
}

void check_count(std::size_t c, std::size_t m) {
    if (c < 1 || c > m) {
        throw ConfigError("requested " + std::to_string(c) + " eigenpairs of a " + std::to_string(m) + "-dim operator");
    }
}

}  // namespace

EigenBasis eigh_full(const RowMatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s);
    if (solver.info() != Eigen::Success) throw NumericError("dense symmetric eigensolver failed");
    EigenBasis basis;
    basis.values = solver.eigenvalues().reverse();
    basis.vectors = solver.eigenvectors().rowwise().reverse();
    apply_sign_convention(basis.vectors);
    return basis;
}

EigenBasis lanczos_top_c(const SymmetricOperator& apply, std::size_t dimension, std::size_t c,
                         const LanczosOptions& options) {
    check_count(c, dimension);
    const auto n = static_cast<Eigen::Index>(dimension);
    const std::size_t max_iter = options.max_iterations ? options.max_iterations : 4 * dimension;
    SplitMix64 rng(options.seed);

    std::vector<VectorXd> q;
    std::vector<double> alpha;
    std::vector<double> beta;  // beta[j] couples q[j] and q[j+1]
    double scale = 0.0;

    const auto orthogonalize = [&](VectorXd& v) {
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& b : q) v -= b.dot(v) * b;
        }
    };
    const auto random_start = [&]() {
        VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
        orthogonalize(v);
        return v;
    };

    VectorXd next = random_start();
    next.normalize();
    q.push_back(next);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
    double worst = std::numeric_limits<double>::infinity();
    VectorXd w(n);
    bool exact = false;

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        const std::size_t j = q.size() - 1;
        apply(q[j], w);
        const double a = q[j].dot(w);
        alpha.push_back(a);
        orthogonalize(w);
        double b = w.norm();
        scale = std::max({scale, std::abs(a), b});
        const std::size_t k = q.size();

        if (k == dimension) {
            beta.push_back(0.0);
            exact = true;
            break;
        }
        if (b <= 1e-10 * std::max(scale, 1e-300)) {
            // Invariant subspace; continue from a fresh direction so repeated
            // eigenvalues are not missed.
            VectorXd v = random_start();
            const double norm = v.norm();
            beta.push_back(0.0);
            if (norm <= 1e-12) {
                exact = true;
                break;
            }
            q.push_back(v / norm);
            continue;
        }
        beta.push_back(b);

        if (k >= c && (k <= 200 || k % 10 == 0)) {
            const VectorXd diag = Eigen::Map<const VectorXd>(alpha.data(), static_cast<Eigen::Index>(k));
            const VectorXd sub = Eigen::Map<const VectorXd>(beta.data(), static_cast<Eigen::Index>(k - 1));
            tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
            worst = 0.0;
            for (std::size_t t = 0; t < c; ++t) {
                const auto col = static_cast<Eigen::Index>(k - 1 - t);
                worst = std::max(worst, std::abs(b * tri.eigenvectors()(static_cast<Eigen::Index>(k - 1), col)));
            }
            if (worst <= options.tolerance) break;
        }
        q.push_back(w / b);
    }

    const std::size_t k = alpha.size();
    if (!exact && worst > options.tolerance) {
        throw ConvergenceError("Lanczos did not converge after " + std::to_string(k) + " iterations (residual " +
                                   std::to_string(worst) + ")",
                               worst, k);
    }
    if (k < c) throw NumericError("Krylov space smaller than the requested eigenvector count");

    const VectorXd diag = Eigen::Map<const VectorXd>(alpha.data(), static_cast<Eigen::Index>(k));
    const VectorXd sub = Eigen::Map<const VectorXd>(beta.data(), static_cast<Eigen::Index>(k - 1));
    tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);

    EigenBasis basis;
    basis.values.resize(static_cast<Eigen::Index>(c));
    basis.vectors = RowMatrixXd::Zero(n, static_cast<Eigen::Index>(c));
    for (std::size_t t = 0; t < c; ++t) {
        const auto col = static_cast<Eigen::Index>(k - 1 - t);
        basis.values[static_cast<Eigen::Index>(t)] = tri.eigenvalues()[col];
        VectorXd x = VectorXd::Zero(n);
        for (std::size_t r = 0; r < k; ++r) x += tri.eigenvectors()(static_cast<Eigen::Index>(r), col) * q[r];
        x.normalize();
        basis.vectors.col(static_cast<Eigen::Index>(t)) = x;
    }
    apply_sign_convention(basis.vectors);
    return basis;
}

EigenBasis eigh_top_c(const RowMatrixXd& s, std::size_t c, EigenMode mode, const LanczosOptions& options) {
    check_symmetric(s);
    check_count(c, static_cast<std::size_t>(s.rows()));
    if (mode == EigenMode::dense) {
        EigenBasis full = eigh_full(s);
        const auto cc = static_cast<Eigen::Index>(c);
        return {full.vectors.leftCols(cc), full.values.head(cc)};
    }
    const auto op = [&s](const VectorXd& x, VectorXd& y) { y.noalias() = s * x; };
    return lanczos_top_c(op, static_cast<std::size_t>(s.rows()), c, options);
}

double max_residual(const RowMatrixXd& s, const EigenBasis& basis) {
    double worst = 0.0;
    for (Eigen::Index c = 0; c < basis.vectors.cols(); ++c) {
        const VectorXd x = basis.vectors.col(c);
        worst = std::max(worst, (s * x - basis.values[c] * x).norm());
    }
    return worst;
}

EighGradient eigh_backward_full(const EigenBasis& full, std::size_t c, const RowMatrixXd& grad_x) {
    const auto m = full.vectors.rows();
    const auto cc = static_cast<Eigen::Index>(c);
    if (grad_x.rows() != m || grad_x.cols() != cc) throw ConfigError("gradient shape does not match the eigenbasis");

    EighGradient out;
    const Eigen::MatrixXd u = full.vectors;
    Eigen::MatrixXd k = u.transpose() * grad_x;  // [m x c]
    for (Eigen::Index j = 0; j < cc; ++j) {
        for (Eigen::Index i = 0; i < m; ++i) {
            if (i == j) {
                k(i, j) = 0.0;
                continue;
            }
            const double d = full.values[j] - full.values[i];
            if (std::abs(d) <= kDegeneracyTolerance) out.degenerate = true;
            k(i, j) *= d / (d * d + kEigenBroadening * kEigenBroadening);
        }
    }
    const Eigen::MatrixXd g = u * k * u.leftCols(cc).transpose();
    out.grad_s = 0.5 * (g + g.transpose());
    return out;
}

EighGradient eigh_backward(const RowMatrixXd& s, const EigenBasis& basis, const RowMatrixXd& grad_x) {
    check_symmetric(s);
    EigenBasis full = eigh_full(s);
    const auto c = basis.size();
    check_count(c, static_cast<std::size_t>(s.rows()));
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(c); ++j) {
        if (full.vectors.col(j).dot(basis.vectors.col(j)) < 0.0) full.vectors.col(j) *= -1.0;
    }
    return eigh_backward_full(full, c, grad_x);
}

CosineResult cosine_rows(const RowMatrixXd& u, const RowMatrixXd& v) {
    if (u.cols() != v.cols()) throw ConfigError("cosine_rows: column counts differ");
    CosineResult r;
    r.values = kernels::omp::cosine_rows(u, v, &r.zero_norm);
    return r;
}

double check_gradient(const ScalarFunction& f, std::span<const double> analytic_grad, std::span<const double> point,
                      double h) {
    if (analytic_grad.size() != point.size()) throw ConfigError("gradient and point sizes differ");
    std::vector<double> x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + h;
        const double up = f(x);
        x[i] = saved - h;
        const double down = f(x);
        x[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("function is non-finite near coordinate " + std::to_string(i));
        }
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic_grad[i] - fd) / std::max(1.0, std::abs(analytic_grad[i])));
    }
    return worst;
}

}  // namespace alignedcut
