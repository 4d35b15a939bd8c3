#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "deepkern/errors.hpp"
#include "deepkern/gram.hpp"
#include "deepkern/kernels.hpp"
#include "deepkern/optimize.hpp"

namespace deepkern {

/// Inner coefficients c: a D x M matrix whose column j is the vector c_j
/// attached to center u_j. The flat parameter vector is its column-major
/// storage, so entry (j, l) sits at index j * D + l.
using InnerCoefficients = Eigen::MatrixXd;

enum class FitMode { Interpolation, Regression };

/// Which objective to evaluate. Interpolation: y^T Q^{-1} y + N(c).
/// Regression: lambda y^T A Q A y + mu N(c) + |(I - Q A) y|^2 with A = (Q + lambda I)^{-1}.
/// A coth separation penalty is added when gamma > 0.
struct ObjectiveSettings {
    FitMode mode = FitMode::Interpolation;
    double lambda = 0.0;
    double mu = 0.0;
    double gamma = 0.0;

    static ObjectiveSettings interpolation(double gamma = 0.0) { return {FitMode::Interpolation, 0.0, 0.0, gamma}; }
    static ObjectiveSettings regression(double lambda, double mu, double gamma = 0.0) {
        return {FitMode::Regression, lambda, mu, gamma};
    }

    void validate() const {
        if (!(gamma >= 0.0)) throw ArgumentError("objective: gamma must be nonnegative");
        if (mode == FitMode::Regression && !(lambda > 0.0 && mu > 0.0))
            throw ArgumentError("objective: regression needs lambda > 0 and mu > 0");
    }
};

struct ObjectiveEval {
    double value = 0.0;
    /// Q was singular beyond the jitter policy or images collided; value is the sentinel.
    bool singular = false;
    Vec gradient;
};

/// Data, kernels and precomputed inner Gram blocks for the two-layer problems.
///
/// The inner function is g(x) = sum_j K(u_j, x) c_j over centers u_j. By
/// default the centers are the training points, which is the span the
/// representer theorem guarantees to contain a minimizer.
class TwoLayerProblem {
public:
    TwoLayerProblem(PointSet X, Vec y, MatrixKernel inner, ScalarKernel outer, PointSet centers = PointSet(),
                    SpdSolvePolicy policy = {})
        : X_(std::move(X)),
          y_(std::move(y)),
          U_(centers.size() == 0 ? X_ : std::move(centers)),
          inner_(std::move(inner)),
          outer_(std::move(outer)),
          policy_(policy) {
        if (X_.cols() < 1) throw ArgumentError("TwoLayerProblem: need at least one data point");
        if (y_.size() != X_.cols()) throw ArgumentError("TwoLayerProblem: need one target per point");
        if (U_.rows() != X_.rows()) throw ArgumentError("TwoLayerProblem: centers and points differ in dimension");
        if (!y_.allFinite()) throw ArgumentError("TwoLayerProblem: non-finite target");
        policy_.validate();
        center_point_ = diagonal_grams(inner_, U_, X_);
        center_center_ = diagonal_grams(inner_, U_, U_);
    }

    Eigen::Index num_points() const noexcept { return X_.cols(); }
    Eigen::Index num_centers() const noexcept { return U_.cols(); }
    int output_dim() const noexcept { return inner_.output_dim(); }
    Eigen::Index num_coefficients() const noexcept { return num_centers() * output_dim(); }

    const PointSet& points() const noexcept { return X_; }
    const PointSet& centers() const noexcept { return U_; }
    const Vec& targets() const noexcept { return y_; }
    const MatrixKernel& inner_kernel() const noexcept { return inner_; }
    const ScalarKernel& outer_kernel() const noexcept { return outer_; }
    const SpdSolvePolicy& policy() const noexcept { return policy_; }

    InnerCoefficients coefficients(const VecRef& flat) const {
        check_flat(flat);
        return Eigen::Map<const Mat>(flat.data(), output_dim(), num_centers());
    }

    /// Images g(x_n) of the training points as a D x N matrix.
    Mat images(const InnerCoefficients& c) const {
        check_coeffs(c);
        Mat Z(output_dim(), num_points());
        for (int l = 0; l < output_dim(); ++l) Z.row(l).noalias() = c.row(l) * center_point_[static_cast<std::size_t>(l)];
        return Z;
    }

    /// g(x) at an arbitrary point.
    Vec inner_eval(const InnerCoefficients& c, const VecRef& x) const {
        check_coeffs(c);
        if (x.size() != X_.rows()) throw ArgumentError("inner_eval: dimension mismatch");
        return apply_inner(inner_, U_, c, x);
    }

    /// Q_{X,X}(c) = (K(g(x_n), g(x_m)))_{n,m}.
    Mat q_matrix(const InnerCoefficients& c) const { return gram(outer_, images(c)); }

    /// N(c) = sum_{j,k} c_j^T K(u_j, u_k) c_k, the squared norm of g.
    double inner_norm_sq(const InnerCoefficients& c) const {
        check_coeffs(c);
        double total = 0.0;
        for (int l = 0; l < output_dim(); ++l)
            total += c.row(l).dot(center_center_[static_cast<std::size_t>(l)] * c.row(l).transpose());
        return total;
    }

    /// The N D x N D block matrix with blocks K(u_i, u_j).
    Mat block_gram() const {
        const Eigen::Index M = num_centers();
        const int D = output_dim();
        Mat B = Mat::Zero(M * D, M * D);
        for (Eigen::Index i = 0; i < M; ++i)
            for (Eigen::Index j = 0; j < M; ++j)
                for (int l = 0; l < D; ++l) B(i * D + l, j * D + l) = center_center_[static_cast<std::size_t>(l)](i, j);
        return B;
    }

    /// gamma * sum_{m<n} coth(|g(x_m) - g(x_n)|^2); sentinel when two images coincide.
    double penalty_coth(const InnerCoefficients& c, double gamma) const {
        if (!(gamma >= 0.0)) throw ArgumentError("penalty_coth: gamma must be nonnegative");
        if (gamma == 0.0) return 0.0;
        return coth_penalty(images(c), gamma);
    }

    double objective_interp(const InnerCoefficients& c, double gamma = 0.0) const {
        return evaluate(flatten(c), ObjectiveSettings::interpolation(gamma), false).value;
    }

    double objective_reg(const InnerCoefficients& c, double lambda, double mu, double gamma = 0.0) const {
        return evaluate(flatten(c), ObjectiveSettings::regression(lambda, mu, gamma), false).value;
    }

    Vec grad_objective_interp(const InnerCoefficients& c, double gamma = 0.0) const {
        return evaluate(flatten(c), ObjectiveSettings::interpolation(gamma), true).gradient;
    }

    Vec grad_objective_reg(const InnerCoefficients& c, double lambda, double mu, double gamma = 0.0) const {
        return evaluate(flatten(c), ObjectiveSettings::regression(lambda, mu, gamma), true).gradient;
    }

    /// Outer coefficients: (Q_{X,X}(c) + lambda I) alpha = y, lambda = 0 allowed.
    Vec outer_fit(const InnerCoefficients& c, double lambda) const {
        if (!(lambda >= 0.0)) throw ArgumentError("outer_fit: lambda must be nonnegative");
        Mat Q = q_matrix(c);
        Q.diagonal().array() += lambda;
        return factor_spd(Q, policy_).solve_vec(y_);
    }

    /// Objective value and (optionally) gradient at flat coefficients.
    ///
    /// Both data terms reduce to s * y^T (Q + lambda I)^{-1} y as functions of Q
    /// (s = 1 for interpolation, s = lambda for regression), so their derivative
    /// with respect to Q is -s * alpha alpha^T. The chain rule through
    /// Q_{nm} = K(z_n, z_m) and z_n = sum_j K(u_j, x_n) c_j gives the gradient in
    /// O(N^3 + N^2 D + N M D) per evaluation.
    ObjectiveEval evaluate(const VecRef& flat, const ObjectiveSettings& settings, bool with_gradient) const {
        settings.validate();
        check_flat(flat);
        const int D = output_dim();
        const Eigen::Index N = num_points();
        const Eigen::Index M = num_centers();
        const Eigen::Map<const Mat> c(flat.data(), D, M);

        ObjectiveEval out;
        auto sentinel = [&] {
            out.value = kSentinel;
            out.singular = true;
            if (with_gradient) out.gradient = Vec::Zero(flat.size());
            return out;
        };

        Mat Z(D, N);
        Mat norm_grad(D, M);  // K_l(U, U) c_l, reused by the gradient
        double norm_sq = 0.0;
        for (int l = 0; l < D; ++l) {
            const auto li = static_cast<std::size_t>(l);
            Z.row(l).noalias() = c.row(l) * center_point_[li];
            norm_grad.row(l).noalias() = c.row(l) * center_center_[li];
            norm_sq += norm_grad.row(l).dot(c.row(l));
        }
        if (!Z.allFinite() || !std::isfinite(norm_sq)) return sentinel();

        double penalty = 0.0;
        if (settings.gamma > 0.0) {
            penalty = coth_penalty(Z, settings.gamma);
            if (is_sentinel(penalty)) return sentinel();
        }

        Mat Q(N, N);
        for (Eigen::Index m = 0; m < N; ++m)
            for (Eigen::Index n = m; n < N; ++n) Q(n, m) = Q(m, n) = outer_.eval_unchecked(Z.col(n), Z.col(m));
        if (!Q.allFinite()) return sentinel();

        const bool regression = settings.mode == FitMode::Regression;
        const double lambda = regression ? settings.lambda : 0.0;
        Mat shifted = Q;
        shifted.diagonal().array() += lambda;
        Vec alpha;
        try {
            alpha = factor_spd(shifted, policy_).solve_vec(y_);
        } catch (const SingularityError&) {
            return sentinel();
        }

        double data_term = 0.0;
        double norm_weight = 1.0;
        double dq_scale = 1.0;  // dF/dQ = -dq_scale * alpha alpha^T
        if (regression) {
            const Vec Qalpha = Q * alpha;
            data_term = lambda * alpha.dot(Qalpha) + (y_ - Qalpha).squaredNorm();
            norm_weight = settings.mu;
            dq_scale = lambda;
        } else {
            data_term = y_.dot(alpha);
        }
        out.value = data_term + norm_weight * norm_sq + penalty;
        if (!std::isfinite(out.value) || is_sentinel(out.value)) return sentinel();
        if (!with_gradient) return out;

        // W(:, n) = dF/dz_n.
        Mat W = Mat::Zero(D, N);
        for (Eigen::Index n = 0; n < N; ++n) {
            const double an = alpha[n];
            if (an == 0.0) continue;
            for (Eigen::Index m = 0; m < N; ++m) {
                const double w = -2.0 * dq_scale * an * alpha[m];
                if (w != 0.0) outer_.add_grad2(Z.col(m), Z.col(n), w, W.col(n));
            }
        }
        if (settings.gamma > 0.0) add_coth_penalty_gradient(Z, settings.gamma, W);

        out.gradient.resize(flat.size());
        Eigen::Map<Mat> G(out.gradient.data(), D, M);
        for (int l = 0; l < D; ++l) {
            const auto li = static_cast<std::size_t>(l);
            G.row(l).noalias() = W.row(l) * center_point_[li].transpose();
            G.row(l) += (2.0 * norm_weight) * norm_grad.row(l);
        }
        return out;
    }

    /// Objective callable for the optimizer.
    ObjectiveFn objective(const ObjectiveSettings& settings) const {
        settings.validate();
        return [this, settings](const Vec& x, Vec* grad) {
            ObjectiveEval e = evaluate(x, settings, grad != nullptr);
            if (grad) *grad = std::move(e.gradient);
            return e.value;
        };
    }

    /// g(x) = sum_j diag(K(u_j, x)) c_j for any diagonal matrix kernel.
    static Vec apply_inner(const MatrixKernel& kernel, const PointSet& centers, const InnerCoefficients& c,
                           const VecRef& x) {
        const int D = kernel.output_dim();
        Vec out = Vec::Zero(D);
        if (kernel.variant() == MatrixKernel::Variant::DiagScaled) {
            const auto& base = kernel.components()[0];
            for (Eigen::Index j = 0; j < centers.cols(); ++j) {
                const double k = base.eval_unchecked(centers.col(j), x);
                for (int l = 0; l < D; ++l) out[l] += kernel.weights()[static_cast<std::size_t>(l)] * k * c(l, j);
            }
        } else {
            for (Eigen::Index j = 0; j < centers.cols(); ++j)
                for (int l = 0; l < D; ++l)
                    out[l] += kernel.components()[static_cast<std::size_t>(l)].eval_unchecked(centers.col(j), x) * c(l, j);
        }
        return out;
    }

    static Vec flatten(const InnerCoefficients& c) { return Eigen::Map<const Vec>(c.data(), c.size()); }

private:
    void check_coeffs(const InnerCoefficients& c) const {
        if (c.rows() != output_dim() || c.cols() != num_centers())
            throw ArgumentError("inner coefficients must be D x M");
    }

    void check_flat(const VecRef& flat) const {
        if (flat.size() != num_coefficients()) throw ArgumentError("flat coefficient vector has wrong length");
    }

    static double coth_penalty(const Mat& Z, double gamma) {
        double total = 0.0;
        for (Eigen::Index m = 0; m < Z.cols(); ++m)
            for (Eigen::Index n = m + 1; n < Z.cols(); ++n) {
                const double d2 = (Z.col(m) - Z.col(n)).squaredNorm();
                if (!(d2 > 0.0)) return kSentinel;
                total += 1.0 / std::tanh(d2);
            }
        const double value = gamma * total;
        return std::isfinite(value) && value < kSentinel ? value : kSentinel;
    }

    // d/dz_n coth(|z_n - z_m|^2) = -2 (z_n - z_m) / sinh^2(|z_n - z_m|^2).
    static void add_coth_penalty_gradient(const Mat& Z, double gamma, Mat& W) {
        for (Eigen::Index m = 0; m < Z.cols(); ++m)
            for (Eigen::Index n = m + 1; n < Z.cols(); ++n) {
                const Vec diff = Z.col(n) - Z.col(m);
                const double sh = std::sinh(diff.squaredNorm());
                const Vec g = (-2.0 * gamma / (sh * sh)) * diff;
                W.col(n) += g;
                W.col(m) -= g;
            }
    }

    PointSet X_;
    Vec y_;
    PointSet U_;
    MatrixKernel inner_;
    ScalarKernel outer_;
    SpdSolvePolicy policy_;
    std::vector<Mat> center_point_;   // K_l(U, X), M x N
    std::vector<Mat> center_center_;  // K_l(U, U), M x M
};

/// A fitted composition f o g.
struct TwoLayerModel {
    PointSet X;
    PointSet centers;
    MatrixKernel inner = MatrixKernel::diag_scaled(ScalarKernel::poly(1), {1.0});
    ScalarKernel outer = ScalarKernel::gauss(1.0);
    InnerCoefficients c;
    Vec alpha;
    double lambda = 0.0;
    double mu = 0.0;
    double gamma = 0.0;
    double objective_value = 0.0;
    /// Images g(x_n) of the training points, D x N. Derived; see refresh_images().
    Mat train_images;

    FitMode mode() const noexcept { return lambda == 0.0 ? FitMode::Interpolation : FitMode::Regression; }

    Vec inner_eval(const VecRef& x) const {
        if (x.size() != X.rows()) throw ArgumentError("TwoLayerModel: dimension mismatch");
        return TwoLayerProblem::apply_inner(inner, centers, c, x);
    }

    void refresh_images() {
        train_images.resize(inner.output_dim(), X.cols());
        for (Eigen::Index n = 0; n < X.cols(); ++n)
            train_images.col(n) = TwoLayerProblem::apply_inner(inner, centers, c, X.col(n));
    }
};

/// f(g(x)) = sum_j alpha_j K(g(x_j), g(x)) using the cached training images.
inline double predict_two_layer(const TwoLayerModel& model, const VecRef& x) {
    const Vec z = model.inner_eval(x);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < model.train_images.cols(); ++j)
        sum += model.alpha[j] * model.outer.eval_unchecked(model.train_images.col(j), z);
    return sum;
}

/// The composition kernel K(g(x), g(y)).
inline double composition_kernel(const TwoLayerModel& model, const VecRef& x, const VecRef& y) {
    return model.outer.eval_unchecked(model.inner_eval(x), model.inner_eval(y));
}

/// sum_j alpha_j composition_kernel(x_j, x), recomputing every inner image.
inline double predict_two_layer_by_kernel(const TwoLayerModel& model, const VecRef& x) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < model.X.cols(); ++j) sum += model.alpha[j] * composition_kernel(model, model.X.col(j), x);
    return sum;
}

/// Assemble a model at fixed coefficients; alpha is solved from scratch at c.
inline TwoLayerModel make_two_layer_model(const TwoLayerProblem& problem, const InnerCoefficients& c,
                                          const ObjectiveSettings& settings) {
    TwoLayerModel model;
    model.X = problem.points();
    model.centers = problem.centers();
    model.inner = problem.inner_kernel();
    model.outer = problem.outer_kernel();
    model.c = c;
    const bool regression = settings.mode == FitMode::Regression;
    model.lambda = regression ? settings.lambda : 0.0;
    model.mu = regression ? settings.mu : 0.0;
    model.gamma = settings.gamma;
    model.alpha = problem.outer_fit(c, model.lambda);
    model.objective_value = problem.evaluate(TwoLayerProblem::flatten(c), settings, false).value;
    model.refresh_images();
    return model;
}

struct TwoLayerFit {
    TwoLayerModel model;
    OptimizationResult optimization;
};

/// Multistart BFGS over c followed by the outer solve at the best c.
inline TwoLayerFit fit_two_layer(const TwoLayerProblem& problem, const ObjectiveSettings& settings,
                                 const BfgsConfig& config, int threads = 1) {
    auto result = multistart(problem.objective(settings), problem.num_coefficients(), config, threads);
    auto model = make_two_layer_model(problem, problem.coefficients(result.c_best), settings);
    return {std::move(model), std::move(result)};
}

}  // namespace deepkern
