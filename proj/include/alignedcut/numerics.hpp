#pragma once

#include "alignedcut/types.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

namespace alignedcut {

/// Top eigenpairs of a symmetric operator. values are sorted descending;
/// vectors holds one orthonormal eigenvector per column.
struct EigenBasis {
    RowMatrixXd vectors;
    VectorXd values;

    std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }
};

enum class EigenMode { dense, iterative };

struct LanczosOptions {
    std::uint64_t seed = 0;
    double tolerance = 1e-8;       ///< residual bound ||S x - lambda x||
    std::size_t max_iterations = 0;  ///< 0 means 4 * dimension
};

/// Flips each column so that its entry of largest magnitude is positive
/// (ties go to the lowest row index).
void apply_sign_convention(RowMatrixXd& vectors);

/// Top-C eigenpairs by algebraic eigenvalue.
/// Throws ConfigError for a non-symmetric matrix or C outside [1, m], and
/// ConvergenceError when the iterative solver exhausts its iterations.
EigenBasis eigh_top_c(const RowMatrixXd& s, std::size_t c, EigenMode mode = EigenMode::dense,
                      const LanczosOptions& options = {});

/// Full symmetric eigendecomposition, descending, sign convention applied.
EigenBasis eigh_full(const RowMatrixXd& s);

/// Matrix-free Lanczos with full reorthogonalization. apply(x, y) must write S x into y.
using SymmetricOperator = std::function<void(const VectorXd&, VectorXd&)>;
EigenBasis lanczos_top_c(const SymmetricOperator& apply, std::size_t dimension, std::size_t c,
                         const LanczosOptions& options = {});

/// Largest residual ||S x_c - lambda_c x_c||_2 over the columns of a basis.
double max_residual(const RowMatrixXd& s, const EigenBasis& basis);

inline constexpr double kEigenBroadening = 1e-8;
inline constexpr double kDegeneracyTolerance = 1e-6;

struct EighGradient {
    RowMatrixXd grad_s;      ///< symmetric dL/dS
    bool degenerate = false;  ///< a relevant eigenvalue gap fell inside kDegeneracyTolerance
};

/// Adjoint of the top-C eigenvector map. The 1/(lambda_j - lambda_i) factors are
/// Lorentzian-broadened, (d)/(d^2 + eps^2), so near-degenerate spectra give a
/// regularized gradient and set the degenerate flag.
EighGradient eigh_backward(const RowMatrixXd& s, const EigenBasis& basis, const RowMatrixXd& grad_x);

/// Same as eigh_backward but reuses a full decomposition of S (from eigh_full).
EighGradient eigh_backward_full(const EigenBasis& full, std::size_t c, const RowMatrixXd& grad_x);

struct CosineResult {
    RowMatrixXd values;
    bool zero_norm = false;  ///< some row had zero norm; its cosines are 0
};

/// Pairwise cosine similarity between the rows of u and v, clamped to [-1, 1].
CosineResult cosine_rows(const RowMatrixXd& u, const RowMatrixXd& v);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// Throws NumericError if f is non-finite at any probe.
double check_gradient(const ScalarFunction& f, std::span<const double> analytic_grad,
                      std::span<const double> point, double h = 1e-5);

}  // namespace alignedcut
