#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "deepkern/deep_stack.hpp"
#include "test_support.hpp"

using namespace deepkern;
using namespace testing_support;

namespace {

MatrixKernel poly1(int D) { return MatrixKernel::diag_scaled(ScalarKernel::poly(1), std::vector<double>(static_cast<std::size_t>(D), 1.0)); }

InnerCoefficients random_coeffs(std::mt19937_64& rng, int D, Eigen::Index N, double scale) {
    const Vec v = normal_vector(rng, D * N, scale);
    return Eigen::Map<const Mat>(v.data(), D, N);
}

// Coefficients that make a Poly-1 layer the identity on R^D:
// f(z) = sum_j (u_j^T z + 1) c_j = C [U^T 1] (z, 1), so C [U^T 1] = [I 0].
InnerCoefficients identity_layer(const PointSet& U) {
    const Eigen::Index D = U.rows();
    Mat A(U.cols(), D + 1);
    A << U.transpose(), Vec::Ones(U.cols());
    Mat target = Mat::Zero(D, D + 1);
    target.leftCols(D) = Mat::Identity(D, D);
    return target * A.completeOrthogonalDecomposition().pseudoInverse();
}

}  // namespace

TEST(LayerStack, TwoLayerStackMatchesTwoLayerModel) {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 10; ++t) {
        const PointSet X = uniform_points(rng, 2, 7);
        const Vec y = normal_vector(rng, 7);
        const auto inner = MatrixKernel::diag_scaled(ScalarKernel::gauss(0.8), {1.0, 0.5});
        const TwoLayerProblem p(X, y, inner, ScalarKernel::tensor_matern(1));
        const auto model = make_two_layer_model(p, random_coeffs(rng, 2, 7, 0.7), ObjectiveSettings::regression(0.1, 0.1));
        const auto stack = make_layer_stack(X, {inner}, {model.c}, model.outer, model.alpha);
        EXPECT_EQ(stack.depth(), 2);
        for (int k = 0; k < 5; ++k) {
            const Vec x = uniform_points(rng, 2, 1).col(0);
            const double expected = predict_two_layer(model, x);
            EXPECT_LE(std::abs(stack.predict(x) - expected), 1e-12 * std::max(1.0, std::abs(expected)));
            const Vec x2 = uniform_points(rng, 2, 1).col(0);
            EXPECT_LE(std::abs(deep_kernel_eval(stack, x, x2) - composition_kernel(model, x, x2)), 1e-13);
        }
    }
}

TEST(LayerStack, ZeroCoefficientsCollapseToOuterAtOrigin) {
    std::mt19937_64 rng(2);
    const PointSet X = uniform_points(rng, 3, 5);
    const auto stack = make_layer_stack(X, {poly1(2), poly1(3)}, {Mat::Zero(2, 5), Mat::Zero(3, 5)},
                                        ScalarKernel::gauss(0.4), Vec::Ones(5));
    EXPECT_EQ(stack.depth(), 3);
    for (int k = 0; k < 5; ++k)
        EXPECT_EQ(deep_kernel_eval(stack, uniform_points(rng, 3, 1).col(0), uniform_points(rng, 3, 1).col(0)), 1.0);
}

TEST(LayerStack, IdentityMiddleLayerReducesToTwoLayers) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 10; ++t) {
        const PointSet X = uniform_points(rng, 2, 6);
        const auto bottom = MatrixKernel::diag_scaled(ScalarKernel::gauss(0.7), {1.0, 1.0});
        const InnerCoefficients c = random_coeffs(rng, 2, 6, 0.8);
        const Vec alpha = normal_vector(rng, 6);
        const auto outer = ScalarKernel::gauss(0.9);
        const auto two = make_layer_stack(X, {bottom}, {c}, outer, alpha);

        // Middle layer centers are the bottom layer's images of X.
        const InnerCoefficients identity = identity_layer(two.outer_centers);
        const auto three = make_layer_stack(X, {poly1(2), bottom}, {identity, c}, outer, alpha);
        EXPECT_LE((three.outer_centers - two.outer_centers).norm(), 1e-10);
        for (int k = 0; k < 5; ++k) {
            const Vec x = uniform_points(rng, 2, 1).col(0);
            const Vec x2 = uniform_points(rng, 2, 1).col(0);
            EXPECT_NEAR(three.predict(x), two.predict(x), 1e-9 * (alpha.lpNorm<1>() + 1.0));
            EXPECT_NEAR(deep_kernel_eval(three, x, x2), deep_kernel_eval(two, x, x2), 1e-10);
        }
    }
}

TEST(GeneralObjective, SquaredLossAtDepthTwoEqualsRegressionObjective) {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 10; ++t) {
        const PointSet X = uniform_points(rng, 2, 6);
        const Vec y = normal_vector(rng, 6);
        const double lambda = 0.05, mu = 0.2;
        const TwoLayerProblem p(X, y, poly1(2), ScalarKernel::gauss(0.6));
        const InnerCoefficients c = random_coeffs(rng, 2, 6, 0.5);
        const Vec alpha = p.outer_fit(c, lambda);
        const auto stack = make_layer_stack(X, {poly1(2)}, {c}, ScalarKernel::gauss(0.6), alpha);
        const double general = objective_general_L(stack, GeneralLoss::Squared, {lambda, mu}, X, y);
        EXPECT_LE(rel_err(general, p.objective_reg(c, lambda, mu)), 1e-10);
    }
}

TEST(GeneralObjective, AllZeroIsZero) {
    std::mt19937_64 rng(5);
    const PointSet X = uniform_points(rng, 2, 4);
    const auto stack = make_layer_stack(X, {poly1(2), poly1(2)}, {Mat::Zero(2, 4), Mat::Zero(2, 4)},
                                        ScalarKernel::gauss(1.0), Vec::Zero(4));
    EXPECT_EQ(objective_general_L(stack, GeneralLoss::Squared, {1.0, 1.0, 1.0}, X, Vec::Zero(4)), 0.0);
    EXPECT_EQ(objective_general_L(stack, GeneralLoss::InterpolationIndicator, {1.0, 1.0, 1.0}, X, Vec::Zero(4)), 0.0);
}

TEST(GeneralObjective, InterpolationIndicator) {
    std::mt19937_64 rng(6);
    const PointSet X = uniform_points(rng, 2, 5);
    const Vec y = normal_vector(rng, 5);
    const TwoLayerProblem p(X, y, poly1(2), ScalarKernel::tensor_matern(1));
    const InnerCoefficients c = random_coeffs(rng, 2, 5, 0.5);
    const auto exact = make_layer_stack(X, {poly1(2)}, {c}, ScalarKernel::tensor_matern(1), p.outer_fit(c, 0.0));
    EXPECT_LE(rel_err(objective_general_L(exact, GeneralLoss::InterpolationIndicator, {1.0, 1.0}, X, y),
                      p.objective_interp(c)),
              1e-8);
    const auto off = make_layer_stack(X, {poly1(2)}, {c}, ScalarKernel::tensor_matern(1), Vec::Zero(5));
    EXPECT_EQ(objective_general_L(off, GeneralLoss::InterpolationIndicator, {1.0, 1.0}, X, y), kSentinel);
}

TEST(GeneralObjective, PackedFunctionAgrees) {
    std::mt19937_64 rng(7);
    const PointSet X = uniform_points(rng, 2, 4);
    const Vec y = normal_vector(rng, 4);
    const std::vector<MatrixKernel> kernels{poly1(3), MatrixKernel::diag_scaled(ScalarKernel::gauss(0.5), {1.0, 2.0})};
    const auto stack = make_layer_stack(X, kernels, {random_coeffs(rng, 3, 4, 0.3), random_coeffs(rng, 2, 4, 0.3)},
                                        ScalarKernel::gauss(1.0), normal_vector(rng, 4));
    const std::vector<double> thetas{0.1, 0.2, 0.3};
    const auto fn = general_objective_fn(X, y, kernels, ScalarKernel::gauss(1.0), GeneralLoss::Squared, thetas);
    const Vec packed = pack_stack(stack);
    EXPECT_EQ(packed.size(), degrees_of_freedom(4, {3, 2}));
    EXPECT_LE(rel_err(fn(packed), objective_general_L(stack, GeneralLoss::Squared, thetas, X, y)), 1e-14);
    EXPECT_THROW(fn(packed.head(packed.size() - 1)), ArgumentError);
}

TEST(GeneralObjective, RejectsWrongThetaCount) {
    const PointSet X = Mat::Identity(2, 2);
    const auto stack = make_layer_stack(X, {poly1(2)}, {Mat::Zero(2, 2)}, ScalarKernel::gauss(1.0), Vec::Zero(2));
    EXPECT_THROW(objective_general_L(stack, GeneralLoss::Squared, {1.0}, X, Vec::Zero(2)), ArgumentError);
}

TEST(DegreesOfFreedom, Examples) {
    EXPECT_EQ(degrees_of_freedom(100, {2}), 300);
    EXPECT_EQ(degrees_of_freedom(10, {}), 10);
    EXPECT_EQ(degrees_of_freedom(10, {2, 3}), 60);
}

TEST(Mlmkl, ZeroWeights) {
    std::mt19937_64 rng(8);
    const PointSet U = uniform_points(rng, 2, 4);
    const auto r = mlmkl_equivalence_check(ScalarKernel::gauss(1.0), ScalarKernel::gauss(0.5), U, Vec::Zero(4),
                                           uniform_points(rng, 2, 1).col(0), uniform_points(rng, 2, 1).col(0));
    EXPECT_EQ(r.lhs, 1.0);
    EXPECT_EQ(r.rhs, 1.0);
}

TEST(Mlmkl, CoincidentArguments) {
    std::mt19937_64 rng(9);
    const PointSet U = uniform_points(rng, 2, 4);
    const Vec x = uniform_points(rng, 2, 1).col(0);
    const auto outer = ScalarKernel::tensor_matern(1);
    const auto r = mlmkl_equivalence_check(outer, ScalarKernel::gauss(0.5), U, normal_vector(rng, 4), x, x);
    EXPECT_EQ(r.lhs, outer.radial_profile(0.0));
    EXPECT_NEAR(r.rhs, std::sqrt(std::acos(-1.0) / 2.0), 1e-15);
}

TEST(Mlmkl, RandomDrawsAgree) {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 200; ++t) {
        const PointSet U = uniform_points(rng, 3, 6);
        const auto outer = t % 2 ? ScalarKernel::gauss(0.3 + 0.1 * (t % 7)) : ScalarKernel::tensor_matern(1 + t % 3);
        const auto inner = t % 3 ? ScalarKernel::gauss(0.7) : ScalarKernel::tensor_matern(2);
        const auto r = mlmkl_equivalence_check(outer, inner, U, normal_vector(rng, 6), uniform_points(rng, 3, 1).col(0),
                                               uniform_points(rng, 3, 1).col(0));
        EXPECT_LE(std::abs(r.lhs - r.rhs), 1e-12 * std::max(1.0, std::abs(r.rhs)));
    }
}

TEST(Mlmkl, PolynomialOuterRejected) {
    const PointSet U = Mat::Identity(2, 2);
    EXPECT_THROW(mlmkl_equivalence_check(ScalarKernel::poly(2), ScalarKernel::gauss(1.0), U, Vec::Ones(2), Vec::Zero(2),
                                         Vec::Ones(2)),
                 ArgumentError);
}
