#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "deepkern/deep_model.hpp"
#include "deepkern/gram.hpp"

namespace deepkern {

/// One vector-valued layer f(z) = sum_j diag(K(u_j, z)) c_j.
struct InnerLayer {
    MatrixKernel kernel;
    PointSet centers;
    InnerCoefficients coeffs;

    Eigen::Index input_dim() const noexcept { return centers.rows(); }
    int output_dim() const noexcept { return kernel.output_dim(); }
    Vec apply(const VecRef& z) const { return TwoLayerProblem::apply_inner(kernel, centers, coeffs, z); }

    double norm_sq() const {
        double total = 0.0;
        const auto grams = diagonal_grams(kernel, centers, centers);
        for (int l = 0; l < output_dim(); ++l)
            total += coeffs.row(l).dot(grams[static_cast<std::size_t>(l)] * coeffs.row(l).transpose());
        return total;
    }
};

/// f_1 o f_2 o ... o f_L with f_1 scalar-valued.
///
/// layers[0] is f_2 (directly below the outer kernel) and layers.back() is
/// f_L, the only layer that sees raw inputs. Each layer's centers are the
/// training points pushed through the layers below it.
struct LayerStack {
    std::vector<InnerLayer> layers;
    ScalarKernel outer;
    PointSet outer_centers;  // f_2 o ... o f_L (X)
    Vec alpha;

    int depth() const noexcept { return static_cast<int>(layers.size()) + 1; }

    void validate() const {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& layer = layers[l];
            if (layer.coeffs.rows() != layer.output_dim() || layer.coeffs.cols() != layer.centers.cols())
                throw ArgumentError("LayerStack: coefficient shape does not match layer " + std::to_string(l + 2));
            if (l > 0 && layer.output_dim() != layers[l - 1].input_dim())
                throw ArgumentError("LayerStack: range of layer " + std::to_string(l + 2) +
                                    " does not match domain of layer " + std::to_string(l + 1));
        }
        const Eigen::Index top_dim = layers.empty() ? outer_centers.rows() : layers[0].output_dim();
        if (outer_centers.rows() != top_dim) throw ArgumentError("LayerStack: outer centers have wrong dimension");
        if (alpha.size() != outer_centers.cols()) throw ArgumentError("LayerStack: need one alpha per outer center");
    }

    /// f_2 o ... o f_L (x).
    Vec transform(const VecRef& x) const {
        Vec z = x;
        for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
            if (z.size() != it->input_dim()) throw ArgumentError("LayerStack: input dimension mismatch");
            z = it->apply(z);
        }
        return z;
    }

    Mat transform_all(const PointSet& X) const {
        Mat out(layers.empty() ? X.rows() : layers[0].output_dim(), X.cols());
        for (Eigen::Index i = 0; i < X.cols(); ++i) out.col(i) = transform(X.col(i));
        return out;
    }

    /// h(x) = sum_j alpha_j K_1(f_2 o ... o f_L (x_j), f_2 o ... o f_L (x)).
    double predict(const VecRef& x) const {
        const Vec z = transform(x);
        double sum = 0.0;
        for (Eigen::Index j = 0; j < outer_centers.cols(); ++j) sum += alpha[j] * outer(outer_centers.col(j), z);
        return sum;
    }
};

/// Builds a stack whose centers are the recursive images of X.
/// kernels/coeffs are in layer order f_2, ..., f_L.
inline LayerStack make_layer_stack(const PointSet& X, const std::vector<MatrixKernel>& kernels,
                                   const std::vector<InnerCoefficients>& coeffs, ScalarKernel outer, Vec alpha) {
    if (kernels.size() != coeffs.size()) throw ArgumentError("make_layer_stack: one coefficient matrix per layer");
    LayerStack stack{{}, std::move(outer), PointSet(), std::move(alpha)};
    PointSet images = X;
    // Build from the input side (f_L) upward, then flip into layer order.
    for (std::size_t k = kernels.size(); k-- > 0;) {
        InnerLayer layer{kernels[k], images, coeffs[k]};
        if (layer.coeffs.rows() != layer.output_dim() || layer.coeffs.cols() != X.cols())
            throw ArgumentError("make_layer_stack: coefficients of layer " + std::to_string(k + 2) + " must be d_l x N");
        PointSet next(layer.output_dim(), X.cols());
        for (Eigen::Index i = 0; i < X.cols(); ++i) next.col(i) = layer.apply(images.col(i));
        images = std::move(next);
        stack.layers.push_back(std::move(layer));
    }
    std::reverse(stack.layers.begin(), stack.layers.end());
    stack.outer_centers = std::move(images);
    stack.validate();
    return stack;
}

/// K^L(x, y) = K_1(f_2 o ... o f_L (x), f_2 o ... o f_L (y)).
inline double deep_kernel_eval(const LayerStack& stack, const VecRef& x, const VecRef& y) {
    stack.validate();
    return stack.outer(stack.transform(x), stack.transform(y));
}

enum class GeneralLoss { Squared, InterpolationIndicator };

/// sum_i L(y_i, h(x_i)) + sum_l theta_l |f_l|^2 with linear penalties theta_l * t.
/// thetas[0] weights the outer function f_1, thetas[k] weights layers[k - 1].
/// The indicator loss is 0 when |h(x_i) - y_i| <= 1e-8 (|y|_inf + 1) for all i and the sentinel otherwise.
inline double objective_general_L(const LayerStack& stack, GeneralLoss loss, const std::vector<double>& thetas,
                                  const PointSet& X, const VecRef& y) {
    stack.validate();
    if (static_cast<int>(thetas.size()) != stack.depth()) throw ArgumentError("objective_general_L: one theta per layer");
    if (y.size() != X.cols() || X.cols() != stack.outer_centers.cols())
        throw ArgumentError("objective_general_L: data do not match the stack");
    const Mat M = gram(stack.outer, stack.outer_centers);
    const Vec h = M * stack.alpha;
    double data = 0.0;
    if (loss == GeneralLoss::Squared) {
        data = (h - y).squaredNorm();
    } else {
        const double tol = 1e-8 * (y.lpNorm<Eigen::Infinity>() + 1.0);
        if ((h - y).lpNorm<Eigen::Infinity>() > tol) return kSentinel;
    }
    double penalty = thetas[0] * stack.alpha.dot(M * stack.alpha);
    for (std::size_t l = 0; l < stack.layers.size(); ++l) penalty += thetas[l + 1] * stack.layers[l].norm_sq();
    const double value = data + penalty;
    return std::isfinite(value) && value < kSentinel ? value : kSentinel;
}

/// N * (1 + sum_{l >= 2} d_l) free coefficients across all layers.
inline long long degrees_of_freedom(long long num_points, const std::vector<int>& layer_output_dims) {
    long long per_point = 1;
    for (int d : layer_output_dims) per_point += d;
    return num_points * per_point;
}

/// Packed parameters of a stack: every layer's coefficients (layer order) followed by alpha.
inline Vec pack_stack(const LayerStack& stack) {
    Eigen::Index size = stack.alpha.size();
    for (const auto& layer : stack.layers) size += layer.coeffs.size();
    Vec out(size);
    Eigen::Index pos = 0;
    for (const auto& layer : stack.layers) {
        out.segment(pos, layer.coeffs.size()) = Eigen::Map<const Vec>(layer.coeffs.data(), layer.coeffs.size());
        pos += layer.coeffs.size();
    }
    out.tail(stack.alpha.size()) = stack.alpha;
    return out;
}

/// objective_general_L as a function of packed parameters; centers follow the
/// coefficients of the layers below. Intended for finite-difference optimization.
inline ScalarFn general_objective_fn(const PointSet& X, const Vec& y, std::vector<MatrixKernel> kernels,
                                     ScalarKernel outer, GeneralLoss loss, std::vector<double> thetas) {
    return [=](const Vec& packed) {
        std::vector<InnerCoefficients> coeffs;
        Eigen::Index pos = 0;
        for (const auto& k : kernels) {
            const Eigen::Index rows = k.output_dim();
            coeffs.emplace_back(Eigen::Map<const Mat>(packed.data() + pos, rows, X.cols()));
            pos += rows * X.cols();
        }
        if (packed.size() != pos + X.cols()) throw ArgumentError("general_objective_fn: packed vector has wrong length");
        const LayerStack stack = make_layer_stack(X, kernels, coeffs, outer, packed.tail(X.cols()));
        return objective_general_L(stack, loss, thetas, X, y);
    };
}

struct MlmklCheck {
    double lhs;
    double rhs;
};

/// Both sides of the identity
///   a(|sum_i nu_i (K_2(x_i, x) - K_2(x_i, y))|) = K_1(g(x), g(y)),  g = sum_i nu_i K_2(x_i, .),
/// for a radial outer kernel K_1(z1, z2) = a(|z1 - z2|) on one-dimensional images.
/// The left side is evaluated as a multi-layer kernel combination, the right through the two-layer machinery.
inline MlmklCheck mlmkl_equivalence_check(const ScalarKernel& outer, const ScalarKernel& inner, const PointSet& centers,
                                          const VecRef& nu, const VecRef& x, const VecRef& y) {
    if (!outer.is_radial()) throw ArgumentError("mlmkl_equivalence_check: outer kernel must be radial");
    if (nu.size() != centers.cols()) throw ArgumentError("mlmkl_equivalence_check: one weight per center");
    if (x.size() != centers.rows() || y.size() != centers.rows())
        throw ArgumentError("mlmkl_equivalence_check: dimension mismatch");
    double combined = 0.0;
    for (Eigen::Index i = 0; i < centers.cols(); ++i)
        combined += nu[i] * (inner(centers.col(i), x) - inner(centers.col(i), y));
    const double lhs = outer.radial_profile(std::abs(combined));

    const auto matrix_kernel = MatrixKernel::diag_scaled(inner, {1.0});
    const InnerCoefficients c = nu.transpose();
    const Vec gx = TwoLayerProblem::apply_inner(matrix_kernel, centers, c, x);
    const Vec gy = TwoLayerProblem::apply_inner(matrix_kernel, centers, c, y);
    return {lhs, outer(gx, gy)};
}

}  // namespace deepkern
