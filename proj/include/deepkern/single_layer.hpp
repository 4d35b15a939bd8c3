#pragma once

#include "deepkern/gram.hpp"

namespace deepkern {

/// Kernel interpolant (lambda = 0) or ridge regressor sum_i alpha_i K(x_i, .).
struct SingleLayerModel {
    ScalarKernel kernel = ScalarKernel::gauss(1.0);
    PointSet centers;
    Vec alpha;
    double lambda = 0.0;
};

inline SingleLayerModel fit_single(const ScalarKernel& kernel, const PointSet& X, const VecRef& y, double lambda,
                                   const SpdSolvePolicy& policy = {}) {
    if (X.cols() < 1) throw ArgumentError("fit_single: need at least one point");
    if (!(lambda >= 0.0)) throw ArgumentError("fit_single: lambda must be nonnegative");
    Vec alpha = lambda == 0.0 ? solve_interpolation(kernel, X, y, policy) : solve_ridge(kernel, X, y, lambda, policy);
    return {kernel, X, std::move(alpha), lambda};
}

inline double predict_single(const SingleLayerModel& model, const VecRef& x) {
    if (x.size() != model.centers.rows()) throw ArgumentError("predict_single: dimension mismatch");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < model.centers.cols(); ++i)
        sum += model.alpha[i] * model.kernel.eval_unchecked(model.centers.col(i), x);
    return sum;
}

/// Squared RKHS norm alpha^T M_{X,X} alpha.
inline double rkhs_norm_sq_single(const SingleLayerModel& model) {
    return model.alpha.dot(gram(model.kernel, model.centers) * model.alpha);
}

}  // namespace deepkern
