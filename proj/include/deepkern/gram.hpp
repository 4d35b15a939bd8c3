#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "deepkern/errors.hpp"
#include "deepkern/kernels.hpp"

namespace deepkern {

/// Point sets are d x N matrices: one column per point.
using PointSet = Eigen::MatrixXd;

/// Jitter escalation for symmetric positive-definite solves.
struct SpdSolvePolicy {
    double jitter_start = 1e-12;
    double jitter_max = 1e-6;
    double growth = 10.0;
    /// Factorizations whose reciprocal condition estimate falls below this are rejected.
    double min_rcond = 1e-15;

    void validate() const {
        if (!(jitter_start > 0.0) || !(jitter_start <= jitter_max) || !(growth > 1.0))
            throw ArgumentError("SpdSolvePolicy: need 0 < jitter_start <= jitter_max and growth > 1");
    }
};

/// K(X_i, Z_j) for every column pair. Exactly symmetric when X and Z are the same object.
inline Mat gram(const ScalarKernel& kernel, const PointSet& X, const PointSet& Z) {
    if (X.rows() != Z.rows()) throw ArgumentError("gram: point dimension mismatch");
    if (!X.allFinite() || !Z.allFinite()) throw ArgumentError("gram: non-finite point");
    Mat M(X.cols(), Z.cols());
    if (&X == &Z) {
        for (Eigen::Index j = 0; j < X.cols(); ++j)
            for (Eigen::Index i = j; i < X.cols(); ++i) M(i, j) = M(j, i) = kernel.eval_unchecked(X.col(i), X.col(j));
        return M;
    }
    for (Eigen::Index j = 0; j < Z.cols(); ++j)
        for (Eigen::Index i = 0; i < X.cols(); ++i) M(i, j) = kernel.eval_unchecked(X.col(i), Z.col(j));
    return M;
}

inline Mat gram(const ScalarKernel& kernel, const PointSet& X) { return gram(kernel, X, X); }

/// Per-component Gram matrices K_l(U_i, X_j) of a diagonal matrix-valued kernel.
inline std::vector<Mat> diagonal_grams(const MatrixKernel& kernel, const PointSet& U, const PointSet& X) {
    const int D = kernel.output_dim();
    std::vector<Mat> out;
    out.reserve(static_cast<std::size_t>(D));
    if (kernel.variant() == MatrixKernel::Variant::DiagScaled) {
        const Mat base = gram(kernel.components()[0], U, X);
        for (int l = 0; l < D; ++l) out.push_back(kernel.weights()[static_cast<std::size_t>(l)] * base);
    } else {
        for (int l = 0; l < D; ++l) out.push_back(gram(kernel.components()[static_cast<std::size_t>(l)], U, X));
    }
    return out;
}

/// A successful Cholesky factorization of M + jitter * I.
class SpdFactorization {
public:
    double jitter() const noexcept { return jitter_; }
    double rcond() const { return llt_.rcond(); }

    template <typename Rhs>
    Mat solve(const Eigen::MatrixBase<Rhs>& b) const {
        return llt_.solve(b);
    }

    Vec solve_vec(const VecRef& b) const { return llt_.solve(b); }

private:
    friend SpdFactorization factor_spd(const Mat& M, const SpdSolvePolicy& policy);
    Eigen::LLT<Mat> llt_;
    double jitter_ = 0.0;
};

namespace detail {

inline double condition_estimate(const Mat& M) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(M, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().cwiseAbs().maxCoeff();
    return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Factor M + jitter * I, trying jitter 0 first and then escalating per policy.
inline SpdFactorization factor_spd(const Mat& M, const SpdSolvePolicy& policy) {
    policy.validate();
    if (M.rows() != M.cols() || M.rows() == 0) throw ArgumentError("spd_solve: matrix must be square and nonempty");
    if (!M.allFinite()) throw SingularityError("spd_solve: matrix has non-finite entries", std::numeric_limits<double>::infinity());
    SpdFactorization f;
    double jitter = 0.0;
    Mat shifted = M;
    while (true) {
        f.llt_.compute(shifted);
        if (f.llt_.info() == Eigen::Success && f.llt_.rcond() >= policy.min_rcond) {
            f.jitter_ = jitter;
            return f;
        }
        const double next = jitter == 0.0 ? policy.jitter_start : jitter * policy.growth;
        if (next > policy.jitter_max * (1.0 + 1e-12)) break;
        shifted.diagonal().array() += next - jitter;
        jitter = next;
    }
    throw SingularityError("spd_solve: matrix is singular beyond jitter " + format_double(policy.jitter_max),
                           detail::condition_estimate(M));
}

struct SpdSolution {
    Mat x;
    double jitter = 0.0;
};

/// Solve (M + jitter I) x = b with the smallest admissible jitter.
inline SpdSolution spd_solve(const Mat& M, const Mat& b, const SpdSolvePolicy& policy = {}) {
    if (b.rows() != M.rows()) throw ArgumentError("spd_solve: right-hand side has wrong row count");
    const auto f = factor_spd(M, policy);
    return {f.solve(b), f.jitter()};
}

/// y^T M^{-1} y through a factorization; the inverse is never formed.
inline double energy_quadratic_form(const Mat& M, const VecRef& y, const SpdSolvePolicy& policy = {}) {
    if (y.size() != M.rows()) throw ArgumentError("energy_quadratic_form: size mismatch");
    const auto f = factor_spd(M, policy);
    return y.dot(f.solve_vec(y));
}

/// Coefficients of the kernel interpolant: M_{X,X} alpha = y.
inline Vec solve_interpolation(const ScalarKernel& kernel, const PointSet& X, const VecRef& y,
                               const SpdSolvePolicy& policy = {}) {
    if (y.size() != X.cols()) throw ArgumentError("solve_interpolation: need one target per point");
    const Mat M = gram(kernel, X);
    Vec alpha = factor_spd(M, policy).solve_vec(y);
    // Jitter makes duplicate points solvable; conflicting targets then leave an O(1) residual.
    const double residual = (M * alpha - y).norm();
    if (!(residual <= 1e-6 * (y.norm() + 1.0)))
        throw SingularityError("solve_interpolation: targets cannot be interpolated (residual " +
                                   format_double(residual) + ")",
                               detail::condition_estimate(M));
    return alpha;
}

/// Kernel ridge coefficients: (M_{X,X} + lambda I) alpha = y.
inline Vec solve_ridge(const ScalarKernel& kernel, const PointSet& X, const VecRef& y, double lambda,
                       const SpdSolvePolicy& policy = {}) {
    if (!(lambda > 0.0)) throw ArgumentError("solve_ridge: lambda must be positive");
    if (y.size() != X.cols()) throw ArgumentError("solve_ridge: need one target per point");
    Mat M = gram(kernel, X);
    M.diagonal().array() += lambda;
    return factor_spd(M, policy).solve_vec(y);
}

}  // namespace deepkern
