#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "deepkern/errors.hpp"
#include "deepkern/numeric_text.hpp"

namespace deepkern {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecRef = Eigen::Ref<const Eigen::VectorXd>;

/// Modified Bessel function of the second kind K_{n+1/2}(r), r > 0.
///
/// Starts from K_{-1/2} = K_{1/2} = sqrt(pi / (2r)) e^{-r} and runs the
/// upward recurrence K_{v+1}(r) = K_{v-1}(r) + (2v / r) K_v(r).
inline double bessel_k_half(int n, double r) {
    if (n < 0) throw ArgumentError("bessel_k_half: order index must be nonnegative");
    if (!(r > 0.0) || !std::isfinite(r)) throw ArgumentError("bessel_k_half: argument must be positive and finite");
    const double k_half = std::sqrt(std::numbers::pi / (2.0 * r)) * std::exp(-r);
    double prev = k_half;  // K_{-1/2}
    double curr = k_half;  // K_{1/2}
    for (int k = 0; k < n; ++k) {
        const double nu = k + 0.5;
        const double next = prev + (2.0 * nu / r) * curr;
        prev = curr;
        curr = next;
    }
    return curr;
}

namespace detail {

// r^{n+1/2} K_{n+1/2}(r) = sqrt(pi/2) e^{-r} sum_k (n+k)! / (k! (n-k)! 2^k) r^{n-k}.
// The polynomial form is finite at r = 0, where it equals the analytic limit.
inline std::vector<double> matern_poly_coefficients(int n) {
    std::vector<double> coeffs(static_cast<std::size_t>(n) + 1);
    for (int k = 0; k <= n; ++k) {
        double value = 1.0;
        for (int i = n - k + 1; i <= n + k; ++i) value *= i;  // (n+k)! / (n-k)!
        for (int i = 2; i <= k; ++i) value /= i;
        value /= std::ldexp(1.0, k);
        coeffs[static_cast<std::size_t>(k)] = value;
    }
    return coeffs;
}

inline double matern_poly(const std::vector<double>& coeffs, double r) {
    // Horner over descending powers r^{n}, ..., r^0 (coefficient index k <-> r^{n-k}).
    double acc = 0.0;
    for (double a : coeffs) acc = acc * r + a;
    return std::sqrt(std::numbers::pi / 2.0) * std::exp(-r) * acc;
}

}  // namespace detail

enum class KernelFamily { Poly, Gauss, TensorMatern };

/// Positive-definite scalar kernel: polynomial (x^T y + 1)^p, Gaussian
/// exp(-|x-y|^2 / (2 sigma^2)), or the unnormalized tensor-product Matern
/// kernel prod_i K_{s-1/2}(|x_i - y_i|) |x_i - y_i|^{s-1/2}.
class ScalarKernel {
public:
    static ScalarKernel poly(int p) {
        if (p < 1) throw ArgumentError("poly kernel: degree p must be >= 1");
        ScalarKernel k(KernelFamily::Poly);
        k.degree_ = p;
        return k;
    }

    static ScalarKernel gauss(double sigma) {
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("gauss kernel: sigma must be positive");
        ScalarKernel k(KernelFamily::Gauss);
        k.sigma_ = sigma;
        return k;
    }

    static ScalarKernel tensor_matern(int s) {
        if (s < 1) throw ArgumentError("tensor_matern kernel: smoothness s must be >= 1");
        ScalarKernel k(KernelFamily::TensorMatern);
        k.degree_ = s;
        k.factor_ = detail::matern_poly_coefficients(s - 1);
        if (s >= 2) k.lower_factor_ = detail::matern_poly_coefficients(s - 2);
        return k;
    }

    KernelFamily family() const noexcept { return family_; }
    int degree() const noexcept { return degree_; }       // p for Poly, s for TensorMatern
    double sigma() const noexcept { return sigma_; }

    /// Kernel value K(x, y).
    double operator()(const VecRef& x, const VecRef& y) const {
        check_args(x, y);
        return eval_unchecked(x, y);
    }

    /// Gradient of K(x, y) with respect to y.
    Vec grad2(const VecRef& x, const VecRef& y) const {
        check_args(x, y);
        Vec out = Vec::Zero(y.size());
        add_grad2(x, y, 1.0, out);
        return out;
    }

    double eval_unchecked(const VecRef& x, const VecRef& y) const {
        switch (family_) {
        case KernelFamily::Poly:
            return ipow(x.dot(y) + 1.0, degree_);
        case KernelFamily::Gauss:
            return std::exp(-(x - y).squaredNorm() / (2.0 * sigma_ * sigma_));
        case KernelFamily::TensorMatern: {
            double prod = 1.0;
            for (Eigen::Index i = 0; i < x.size(); ++i) prod *= matern_factor(std::abs(x[i] - y[i]));
            return prod;
        }
        }
        return 0.0;
    }

    /// out += weight * dK(x, y)/dy. No shape checks.
    ///
    /// The Matern s = 1 factor has a kink at x_i = y_i; the derivative
    /// there is taken as 0 in that coordinate.
    void add_grad2(const VecRef& x, const VecRef& y, double weight, Eigen::Ref<Vec> out) const {
        switch (family_) {
        case KernelFamily::Poly: {
            const double base = x.dot(y) + 1.0;
            out.noalias() += (weight * degree_ * ipow(base, degree_ - 1)) * x;
            return;
        }
        case KernelFamily::Gauss: {
            const double inv_s2 = 1.0 / (sigma_ * sigma_);
            const double k = std::exp(-(x - y).squaredNorm() * 0.5 * inv_s2);
            out.noalias() += (weight * k * inv_s2) * (x - y);
            return;
        }
        case KernelFamily::TensorMatern: {
            const Eigen::Index d = x.size();
            for (Eigen::Index i = 0; i < d; ++i) {
                const double diff = y[i] - x[i];
                if (diff == 0.0) continue;
                const double r = std::abs(diff);
                double others = 1.0;
                for (Eigen::Index k = 0; k < d; ++k)
                    if (k != i) others *= matern_factor(std::abs(x[k] - y[k]));
                const double sign = diff > 0.0 ? 1.0 : -1.0;
                out[i] += weight * others * matern_factor_derivative(r) * sign;
            }
            return;
        }
        }
    }

    /// True when K(z1, z2) = a(|z1 - z2|) for one-dimensional inputs.
    bool is_radial() const noexcept { return family_ != KernelFamily::Poly; }

    /// Radial profile a(r) of a radial kernel restricted to one dimension.
    double radial_profile(double r) const {
        switch (family_) {
        case KernelFamily::Gauss:
            return std::exp(-r * r / (2.0 * sigma_ * sigma_));
        case KernelFamily::TensorMatern:
            return matern_factor(std::abs(r));
        case KernelFamily::Poly:
            break;
        }
        throw ArgumentError("radial_profile: polynomial kernel is not radial");
    }

    /// One-dimensional Matern factor r^{s-1/2} K_{s-1/2}(r), defined at r = 0 by its limit.
    double matern_factor(double r) const { return detail::matern_poly(factor_, r); }

    double matern_factor_derivative(double r) const {
        // d/dr [r^v K_v(r)] = -r^v K_{v-1}(r); for v = 1/2 this is -factor, else -r * lower factor.
        if (degree_ == 1) return r > 0.0 ? -matern_factor(r) : 0.0;
        return -r * detail::matern_poly(lower_factor_, r);
    }

    /// Text form used in model files and configs, e.g. "gauss:0.1".
    std::string to_string() const {
        switch (family_) {
        case KernelFamily::Poly: return "poly:" + std::to_string(degree_);
        case KernelFamily::Gauss: return "gauss:" + format_double(sigma_);
        case KernelFamily::TensorMatern: return "tensor_matern:" + std::to_string(degree_);
        }
        return {};
    }

    static ScalarKernel parse(std::string_view text) {
        const auto colon = text.find(':');
        if (colon == std::string_view::npos) throw InputError("kernel spec needs 'family:param': " + std::string(text));
        const auto family = trim(text.substr(0, colon));
        const auto param = text.substr(colon + 1);
        if (family == "poly") return poly(static_cast<int>(parse_integer(param)));
        if (family == "gauss") return gauss(parse_double(param));
        if (family == "tensor_matern") return tensor_matern(static_cast<int>(parse_integer(param)));
        throw InputError("unknown kernel family: " + std::string(family));
    }

    friend bool operator==(const ScalarKernel& a, const ScalarKernel& b) {
        return a.family_ == b.family_ && a.degree_ == b.degree_ && a.sigma_ == b.sigma_;
    }

private:
    explicit ScalarKernel(KernelFamily f) : family_(f) {}

    static double ipow(double base, int p) {
        double result = 1.0;
        for (int i = 0; i < p; ++i) result *= base;
        return result;
    }

    static void check_args(const VecRef& x, const VecRef& y) {
        if (x.size() != y.size() || x.size() == 0) throw ArgumentError("kernel: dimension mismatch");
        if (!x.allFinite() || !y.allFinite()) throw ArgumentError("kernel: non-finite input");
    }

    KernelFamily family_;
    int degree_ = 0;
    double sigma_ = 0.0;
    std::vector<double> factor_;
    std::vector<double> lower_factor_;
};

/// Diagonal matrix-valued kernel R^d x R^d -> R^{D x D}.
///
/// DiagScaled: K_I(x, y) * diag(a). DiagMixture: diag(K_1(x, y), ..., K_D(x, y)).
class MatrixKernel {
public:
    enum class Variant { DiagScaled, DiagMixture };

    static MatrixKernel diag_scaled(ScalarKernel base, std::vector<double> weights) {
        if (weights.empty()) throw ArgumentError("diag_scaled: weight vector must be nonempty");
        for (double w : weights)
            if (!(w > 0.0) || !std::isfinite(w)) throw ArgumentError("diag_scaled: weights must be positive");
        MatrixKernel k(Variant::DiagScaled);
        k.components_.push_back(std::move(base));
        k.weights_ = std::move(weights);
        return k;
    }

    static MatrixKernel diag_mixture(std::vector<ScalarKernel> components) {
        if (components.empty()) throw ArgumentError("diag_mixture: needs at least one component");
        MatrixKernel k(Variant::DiagMixture);
        k.components_ = std::move(components);
        return k;
    }

    Variant variant() const noexcept { return variant_; }

    /// Output dimension D.
    int output_dim() const noexcept {
        return variant_ == Variant::DiagScaled ? static_cast<int>(weights_.size())
                                               : static_cast<int>(components_.size());
    }

    const std::vector<ScalarKernel>& components() const noexcept { return components_; }
    const std::vector<double>& weights() const noexcept { return weights_; }

    /// Diagonal entry l of K(x, y).
    double entry(int l, const VecRef& x, const VecRef& y) const {
        if (variant_ == Variant::DiagScaled) return weights_[static_cast<std::size_t>(l)] * components_[0](x, y);
        return components_[static_cast<std::size_t>(l)](x, y);
    }

    /// The diagonal of K(x, y).
    Vec diagonal(const VecRef& x, const VecRef& y) const {
        const int D = output_dim();
        Vec diag(D);
        if (variant_ == Variant::DiagScaled) {
            const double base = components_[0](x, y);
            for (int l = 0; l < D; ++l) diag[l] = weights_[static_cast<std::size_t>(l)] * base;
        } else {
            for (int l = 0; l < D; ++l) diag[l] = components_[static_cast<std::size_t>(l)](x, y);
        }
        return diag;
    }

    /// Full D x D (diagonal) kernel matrix.
    Mat operator()(const VecRef& x, const VecRef& y) const { return diagonal(x, y).asDiagonal(); }

    std::string to_string() const {
        std::string out = variant_ == Variant::DiagScaled ? "diag_scaled(" + components_[0].to_string() + ";"
                                                          : std::string("diag_mixture(");
        if (variant_ == Variant::DiagScaled) {
            for (std::size_t i = 0; i < weights_.size(); ++i)
                out += (i ? "," : "") + format_double(weights_[i]);
        } else {
            for (std::size_t i = 0; i < components_.size(); ++i)
                out += (i ? "," : "") + components_[i].to_string();
        }
        return out + ")";
    }

    static MatrixKernel parse(std::string_view text) {
        text = trim(text);
        const auto open = text.find('(');
        if (open == std::string_view::npos || text.back() != ')')
            throw InputError("matrix kernel spec must look like variant(...): " + std::string(text));
        const auto name = text.substr(0, open);
        const auto body = text.substr(open + 1, text.size() - open - 2);
        auto split = [](std::string_view s, char sep) {
            std::vector<std::string_view> parts;
            std::size_t start = 0;
            while (true) {
                const auto pos = s.find(sep, start);
                parts.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
                if (pos == std::string_view::npos) break;
                start = pos + 1;
            }
            return parts;
        };
        if (name == "diag_scaled") {
            const auto semi = body.find(';');
            if (semi == std::string_view::npos) throw InputError("diag_scaled spec needs 'kernel;weights'");
            std::vector<double> weights;
            for (auto w : split(body.substr(semi + 1), ',')) weights.push_back(parse_double(w));
            return diag_scaled(ScalarKernel::parse(body.substr(0, semi)), std::move(weights));
        }
        if (name == "diag_mixture") {
            std::vector<ScalarKernel> comps;
            for (auto c : split(body, ',')) comps.push_back(ScalarKernel::parse(c));
            return diag_mixture(std::move(comps));
        }
        throw InputError("unknown matrix kernel variant: " + std::string(name));
    }

    friend bool operator==(const MatrixKernel& a, const MatrixKernel& b) {
        return a.variant_ == b.variant_ && a.components_ == b.components_ && a.weights_ == b.weights_;
    }

private:
    explicit MatrixKernel(Variant v) : variant_(v) {}

    Variant variant_;
    std::vector<ScalarKernel> components_;
    std::vector<double> weights_;
};

}  // namespace deepkern
