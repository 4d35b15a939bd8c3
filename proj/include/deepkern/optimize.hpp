#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "deepkern/errors.hpp"
#include "deepkern/kernels.hpp"
#include "deepkern/parallel.hpp"

namespace deepkern {

/// Objective with gradient: returns f(x) and, when grad is non-null, writes grad f(x).
using ObjectiveFn = std::function<double(const Vec& x, Vec* grad)>;
using ScalarFn = std::function<double(const Vec& x)>;
using GradientFn = std::function<Vec(const Vec& x)>;

struct BfgsConfig {
    int max_iters = 500;
    double grad_tol = 1e-6;  // infinity norm
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
    int restarts = 64;
    double init_scale = 1.0;
    std::uint64_t seed = 0;
    /// Keep a per-step record of accepted line-search steps.
    bool record_trace = false;

    void validate() const {
        if (!(0.0 < wolfe_c1 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0))
            throw ArgumentError("BfgsConfig: need 0 < c1 < c2 < 1");
        if (restarts < 1) throw ArgumentError("BfgsConfig: restarts must be >= 1");
        if (max_iters < 0) throw ArgumentError("BfgsConfig: max_iters must be >= 0");
        if (!(grad_tol >= 0.0)) throw ArgumentError("BfgsConfig: grad_tol must be >= 0");
        if (!(init_scale >= 0.0)) throw ArgumentError("BfgsConfig: init_scale must be >= 0");
    }
};

/// One accepted step: f before/after, step length, directional derivatives.
struct StepRecord {
    double f_before;
    double f_after;
    double step;
    double slope_before;
    double slope_after;
    bool strong_wolfe;
};

struct OptimizationResult {
    Vec c_best;
    double objective = std::numeric_limits<double>::infinity();
    int restart_index = 0;
    int iterations = 0;
    bool converged = false;
    double grad_norm = std::numeric_limits<double>::infinity();
    std::vector<StepRecord> trace;
};

namespace detail {

struct TrialPoint {
    double step = 0.0;
    double f = 0.0;
    double slope = 0.0;
    Vec x;
    Vec g;
};

inline bool unusable(double f) { return !std::isfinite(f) || is_sentinel(f); }

// Minimizer of the cubic through (a, fa, da) and (b, fb, db); NaN when it does not exist.
inline double cubic_minimizer(double a, double fa, double da, double b, double fb, double db) {
    const double d1 = da + db - 3.0 * (fa - fb) / (a - b);
    const double disc = d1 * d1 - da * db;
    if (disc < 0.0) return std::numeric_limits<double>::quiet_NaN();
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = db - da + 2.0 * d2;
    if (denom == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return b - (b - a) * (db + d2 - d1) / denom;
}

struct LineSearchOutcome {
    bool ok = false;
    bool strong_wolfe = false;
    TrialPoint point;
};

// Strong Wolfe line search with bracketing and cubic zoom. Sentinel values
// count as a failed sufficient-decrease test, so the bracket shrinks toward the start.
inline LineSearchOutcome strong_wolfe_search(const ObjectiveFn& fn, const Vec& x, double f0, const Vec& g0,
                                             const Vec& dir, double initial_step, double c1, double c2) {
    const double slope0 = g0.dot(dir);
    auto evaluate = [&](double step) {
        TrialPoint t;
        t.step = step;
        t.x = x + step * dir;
        t.g.resize(x.size());
        t.f = fn(t.x, &t.g);
        t.slope = unusable(t.f) ? 0.0 : t.g.dot(dir);
        return t;
    };
    auto armijo_fails = [&](const TrialPoint& t) { return unusable(t.f) || t.f > f0 + c1 * t.step * slope0; };
    auto curvature_ok = [&](const TrialPoint& t) { return std::abs(t.slope) <= -c2 * slope0; };

    auto zoom = [&](TrialPoint lo, TrialPoint hi) -> LineSearchOutcome {
        for (int iter = 0; iter < 40; ++iter) {
            const double left = std::min(lo.step, hi.step);
            const double right = std::max(lo.step, hi.step);
            const double width = right - left;
            if (width <= 1e-14 * std::max(1.0, right)) break;
            double step = std::numeric_limits<double>::quiet_NaN();
            if (!unusable(hi.f)) step = cubic_minimizer(lo.step, lo.f, lo.slope, hi.step, hi.f, hi.slope);
            if (!std::isfinite(step) || step < left + 0.1 * width || step > right - 0.1 * width)
                step = 0.5 * (lo.step + hi.step);
            TrialPoint t = evaluate(step);
            if (armijo_fails(t) || t.f >= lo.f) {
                hi = std::move(t);
            } else {
                if (curvature_ok(t)) return {true, true, std::move(t)};
                if (t.slope * (hi.step - lo.step) >= 0.0) hi = lo;
                lo = std::move(t);
            }
        }
        // Bracket collapsed: keep the best sufficient-decrease point if it moved at all.
        if (lo.step > 0.0 && lo.f < f0) return {true, false, std::move(lo)};
        return {};
    };

    TrialPoint prev;
    prev.step = 0.0;
    prev.f = f0;
    prev.slope = slope0;
    prev.x = x;
    prev.g = g0;
    double step = initial_step;
    for (int iter = 0; iter < 60; ++iter) {
        TrialPoint t = evaluate(step);
        if (armijo_fails(t) || (iter > 0 && t.f >= prev.f)) return zoom(std::move(prev), std::move(t));
        if (curvature_ok(t)) return {true, true, std::move(t)};
        if (t.slope >= 0.0) return zoom(std::move(t), std::move(prev));
        prev = std::move(t);
        step *= 2.0;
    }
    if (prev.step > 0.0 && prev.f < f0) return {true, false, std::move(prev)};
    return {};
}

}  // namespace detail

/// Dense BFGS on the inverse Hessian with a strong Wolfe line search.
///
/// Stops when |grad|_inf <= grad_tol, after max_iters, or when the line search
/// cannot make progress. A starting point in the sentinel region is returned
/// unchanged with converged = false.
inline OptimizationResult bfgs_minimize(const ObjectiveFn& fn, const Vec& x0, const BfgsConfig& config) {
    config.validate();
    const Eigen::Index n = x0.size();
    OptimizationResult result;
    Vec x = x0;
    Vec g(n);
    double f = fn(x, &g);
    if (!std::isfinite(f)) throw ArgumentError("bfgs_minimize: objective is not finite at the starting point");
    result.c_best = x;
    result.objective = f;
    if (is_sentinel(f)) return result;
    result.grad_norm = n > 0 ? g.lpNorm<Eigen::Infinity>() : 0.0;
    if (result.grad_norm <= config.grad_tol) {
        result.converged = true;
        return result;
    }

    Mat H = Mat::Identity(n, n);
    bool scaled = false;
    for (int iter = 0; iter < config.max_iters; ++iter) {
        Vec dir = -H * g;
        if (!(dir.dot(g) < 0.0)) {
            H.setIdentity();
            scaled = false;
            dir = -g;
        }
        const double initial_step = scaled ? 1.0 : std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>());
        auto ls = detail::strong_wolfe_search(fn, x, f, g, dir, initial_step, config.wolfe_c1, config.wolfe_c2);
        if (!ls.ok) break;

        const Vec s = ls.point.x - x;
        const Vec y = ls.point.g - g;
        const double sy = s.dot(y);
        if (config.record_trace)
            result.trace.push_back({f, ls.point.f, ls.point.step, g.dot(dir), ls.point.slope, ls.strong_wolfe});
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (!scaled) {
                H *= sy / y.squaredNorm();
                scaled = true;
            }
            const double rho = 1.0 / sy;
            const Vec Hy = H * y;
            const double yHy = y.dot(Hy);
            H.noalias() -= rho * (Hy * s.transpose() + s * Hy.transpose());
            H.noalias() += (rho * rho * yHy + rho) * (s * s.transpose());
        }
        x = std::move(ls.point.x);
        g = std::move(ls.point.g);
        f = ls.point.f;
        ++result.iterations;
        result.grad_norm = g.lpNorm<Eigen::Infinity>();
        if (result.grad_norm <= config.grad_tol) {
            result.converged = true;
            break;
        }
    }
    result.c_best = std::move(x);
    result.objective = f;
    return result;
}

/// Separate value and gradient callables.
inline OptimizationResult bfgs_minimize(const ScalarFn& f, const GradientFn& grad, const Vec& x0,
                                        const BfgsConfig& config) {
    ObjectiveFn fn = [&](const Vec& x, Vec* g) {
        const double value = f(x);
        if (g) *g = grad(x);
        return value;
    };
    return bfgs_minimize(fn, x0, config);
}

/// Starting point of restart k: init_scale * N(0, I) drawn from the stream seeded with seed XOR k.
inline Vec initial_point(Eigen::Index dim, const BfgsConfig& config, int restart) {
    std::mt19937_64 rng(config.seed ^ static_cast<std::uint64_t>(restart));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vec x(dim);
    for (Eigen::Index i = 0; i < dim; ++i) x[i] = config.init_scale * normal(rng);
    return x;
}

/// Independent BFGS runs from seeded random starts; the smallest objective wins,
/// ties going to the lowest restart index.
inline OptimizationResult multistart(const ObjectiveFn& fn, Eigen::Index dim, const BfgsConfig& config,
                                     int threads = 1) {
    config.validate();
    std::vector<OptimizationResult> runs(static_cast<std::size_t>(config.restarts));
    parallel_for(runs.size(), threads, [&](std::size_t k) {
        const int restart = static_cast<int>(k);
        runs[k] = bfgs_minimize(fn, initial_point(dim, config, restart), config);
        runs[k].restart_index = restart;
    });
    const OptimizationResult* best = nullptr;
    for (const auto& run : runs) {
        if (detail::unusable(run.objective)) continue;
        if (!best || run.objective < best->objective) best = &run;
    }
    if (!best) throw OptimizationError("multistart: no restart produced a finite objective");
    return *best;
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / (2h).
inline Vec finite_diff_grad(const ScalarFn& f, const Vec& x, double h) {
    if (!(h > 0.0)) throw ArgumentError("finite_diff_grad: step must be positive");
    Vec grad(x.size());
    Vec probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

struct GradCheckReport {
    double max_rel_err = 0.0;
    Eigen::Index worst_component = -1;
    bool passed = true;
};

/// Compares an analytic gradient with central differences. Components whose
/// finite-difference magnitude is below 1e-8 are compared absolutely.
inline GradCheckReport grad_check(const ScalarFn& f, const GradientFn& grad, const Vec& x, double h, double rel_tol) {
    const Vec fd = finite_diff_grad(f, x, h);
    const Vec an = grad(x);
    if (an.size() != fd.size()) throw ArgumentError("grad_check: gradient has wrong size");
    GradCheckReport report;
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
        const double diff = std::abs(an[i] - fd[i]);
        const double err = std::abs(fd[i]) < 1e-8 ? diff : diff / std::abs(fd[i]);
        if (!(err <= report.max_rel_err) || report.worst_component < 0) {
            report.max_rel_err = err;
            report.worst_component = i;
        }
    }
    report.passed = report.max_rel_err <= rel_tol;
    return report;
}

}  // namespace deepkern
