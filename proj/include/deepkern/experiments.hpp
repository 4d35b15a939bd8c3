#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deepkern/deep_model.hpp"
#include "deepkern/parallel.hpp"
#include "deepkern/random.hpp"
#include "deepkern/single_layer.hpp"

namespace deepkern {

enum class TestFunction { H1, H2 };

/// h1(x, y) = 1 / (0.1 + |x - y|); h2(x, y) = 1 if x y > 3/20 else 0.
inline double eval_test_function(TestFunction tf, const VecRef& p) {
    if (p.size() != 2) throw ArgumentError("test functions are defined on two-dimensional points");
    if (tf == TestFunction::H1) return 1.0 / (0.1 + std::abs(p[0] - p[1]));
    return p[0] * p[1] > 3.0 / 20.0 ? 1.0 : 0.0;
}

inline std::string to_string(TestFunction tf) { return tf == TestFunction::H1 ? "h1" : "h2"; }

inline TestFunction parse_test_function(std::string_view name) {
    if (name == "h1") return TestFunction::H1;
    if (name == "h2") return TestFunction::H2;
    throw InputError("unknown test function: " + std::string(name));
}

struct Dataset {
    PointSet X;
    Vec y;
};

struct SamplingPlan {
    int n_samples = 100;
    Vec lower = Vec::Constant(2, -1.0);
    Vec upper = Vec::Constant(2, 1.0);
    double noise_sigma = 0.01;
    std::uint64_t seed = 0;
};

using Predictor = std::function<double(const VecRef&)>;

/// Uniform points in the box and y_i = target(x_i) + N(0, sigma^2) noise.
inline Dataset sample_dataset(const Predictor& target, const SamplingPlan& plan) {
    if (plan.n_samples < 1) throw ArgumentError("sample_dataset: need at least one sample");
    if (!(plan.noise_sigma >= 0.0)) throw ArgumentError("sample_dataset: noise sigma must be nonnegative");
    if (plan.lower.size() != plan.upper.size() || !(plan.lower.array() < plan.upper.array()).all())
        throw ArgumentError("sample_dataset: invalid box");
    std::mt19937_64 rng(plan.seed);
    const Eigen::Index d = plan.lower.size();
    Dataset data{PointSet(d, plan.n_samples), Vec(plan.n_samples)};
    for (int i = 0; i < plan.n_samples; ++i)
        for (Eigen::Index k = 0; k < d; ++k) {
            std::uniform_real_distribution<double> uni(plan.lower[k], plan.upper[k]);
            data.X(k, i) = uni(rng);
        }
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int i = 0; i < plan.n_samples; ++i)
        data.y[i] = target(data.X.col(i)) + plan.noise_sigma * noise(rng);
    return data;
}

inline Dataset sample_dataset(TestFunction tf, const SamplingPlan& plan) {
    return sample_dataset([tf](const VecRef& p) { return eval_test_function(tf, p); }, plan);
}

/// Uniform tensor grid over a box, endpoints included.
struct EvalGrid {
    double meshwidth = 1.0 / 50.0;
    Vec lower = Vec::Constant(2, -1.0);
    Vec upper = Vec::Constant(2, 1.0);

    std::vector<Eigen::Index> points_per_axis() const {
        std::vector<Eigen::Index> counts;
        for (Eigen::Index k = 0; k < lower.size(); ++k)
            counts.push_back(static_cast<Eigen::Index>(std::llround((upper[k] - lower[k]) / meshwidth)) + 1);
        return counts;
    }

    /// Grid points, first coordinate varying slowest.
    PointSet points() const {
        if (!(meshwidth > 0.0) || lower.size() != upper.size()) throw ArgumentError("EvalGrid: invalid grid");
        const auto counts = points_per_axis();
        Eigen::Index total = 1;
        for (auto c : counts) total *= c;
        PointSet P(lower.size(), total);
        for (Eigen::Index idx = 0; idx < total; ++idx) {
            Eigen::Index rem = idx;
            for (Eigen::Index k = lower.size(); k-- > 0;) {
                const Eigen::Index i = rem % counts[static_cast<std::size_t>(k)];
                rem /= counts[static_cast<std::size_t>(k)];
                const Eigen::Index n = counts[static_cast<std::size_t>(k)];
                P(k, idx) = n == 1 ? lower[k]
                                   : (i == n - 1 ? upper[k]
                                                 : lower[k] + static_cast<double>(i) * (upper[k] - lower[k]) /
                                                                  static_cast<double>(n - 1));
            }
        }
        return P;
    }
};

struct ErrorGrid {
    PointSet points;
    Vec errors;
    double mean = 0.0;
    double max = 0.0;
    /// Fraction of grid points whose error exceeds 10% of sup |h| on the grid.
    double frac_above_10pct = 0.0;
    double h_sup = 0.0;
};

inline ErrorGrid pointwise_error_grid(const Predictor& predictor, const Predictor& truth, const EvalGrid& grid) {
    ErrorGrid out;
    out.points = grid.points();
    const Eigen::Index n = out.points.cols();
    out.errors.resize(n);
    Vec h(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        h[i] = truth(out.points.col(i));
        out.errors[i] = std::abs(predictor(out.points.col(i)) - h[i]);
    }
    out.h_sup = h.cwiseAbs().maxCoeff();
    out.mean = out.errors.mean();
    out.max = out.errors.maxCoeff();
    out.frac_above_10pct =
        static_cast<double>((out.errors.array() > 0.1 * out.h_sup).count()) / static_cast<double>(n);
    return out;
}

inline ErrorGrid pointwise_error_grid(const Predictor& predictor, TestFunction tf, const EvalGrid& grid) {
    return pointwise_error_grid(predictor, [tf](const VecRef& p) { return eval_test_function(tf, p); }, grid);
}

/// The grid {2^{-2t+1} : t = 1..10}.
inline std::vector<double> powers_of_two_grid() {
    std::vector<double> g;
    for (int t = 1; t <= 10; ++t) g.push_back(std::ldexp(1.0, -2 * t + 1));
    return g;
}

/// The grid {10^{-2t+1} : t = 1..6}.
inline std::vector<double> powers_of_ten_grid() {
    std::vector<double> g;
    for (int t = 1; t <= 6; ++t) g.push_back(std::pow(10.0, -2 * t + 1));
    return g;
}

enum class CvMetric { HoldoutMse, TrainObjective };

struct CvPlan {
    int folds = 5;
    std::vector<double> lambda_grid = powers_of_two_grid();
    std::vector<double> mu_grid = powers_of_two_grid();
    std::uint64_t seed = 0;
    CvMetric metric = CvMetric::HoldoutMse;
    /// Restarts per (lambda, mu, fold) fit; 0 uses the model's optimizer setting.
    int restarts = 0;

    void validate() const {
        if (folds < 2) throw ArgumentError("CvPlan: need at least two folds");
        if (lambda_grid.empty() || mu_grid.empty()) throw ArgumentError("CvPlan: grids must be nonempty");
        for (double v : lambda_grid)
            if (!(v > 0.0)) throw ArgumentError("CvPlan: lambda values must be positive");
        for (double v : mu_grid)
            if (!(v > 0.0)) throw ArgumentError("CvPlan: mu values must be positive");
    }
};

/// Kernels and optimizer settings of a two-layer model, independent of data.
struct TwoLayerSpec {
    ScalarKernel outer = ScalarKernel::gauss(1.0);
    MatrixKernel inner = MatrixKernel::diag_scaled(ScalarKernel::poly(1), {1.0, 1.0});
    double gamma = 0.0;
    BfgsConfig opt;
};

/// Shuffled indices cut into `folds` contiguous blocks whose sizes differ by at most one.
inline std::vector<std::vector<Eigen::Index>> fold_partition(Eigen::Index n, int folds, std::uint64_t seed) {
    if (folds < 2) throw ArgumentError("fold_partition: need at least two folds");
    if (n < folds) throw ArgumentError("fold_partition: every fold needs at least one point");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(folds));
    std::size_t pos = 0;
    for (int f = 0; f < folds; ++f) {
        const auto size = static_cast<std::size_t>(n / folds + (f < n % folds ? 1 : 0));
        out[static_cast<std::size_t>(f)].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                                order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        pos += size;
    }
    return out;
}

inline Dataset subset(const Dataset& data, const std::vector<Eigen::Index>& idx) {
    Dataset out{PointSet(data.X.rows(), static_cast<Eigen::Index>(idx.size())), Vec(static_cast<Eigen::Index>(idx.size()))};
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.X.col(static_cast<Eigen::Index>(i)) = data.X.col(idx[i]);
        out.y[static_cast<Eigen::Index>(i)] = data.y[idx[i]];
    }
    return out;
}

struct CvCell {
    double lambda;
    double mu;
    std::vector<double> fold_scores;
    double mean_score;
};

struct CvResult {
    double best_lambda = 0.0;
    double best_mu = 0.0;
    std::vector<CvCell> cells;
};

/// Grid search over (lambda, mu) scored by k-fold cross-validation of the regression fit.
/// Ties in the mean score go to the lexicographically larger (lambda, mu).
inline CvResult cross_validate(const Dataset& data, const TwoLayerSpec& spec, const CvPlan& plan, int threads = 1) {
    plan.validate();
    const auto folds = fold_partition(data.X.cols(), plan.folds, plan.seed);
    std::vector<std::vector<Eigen::Index>> train_idx(folds.size());
    for (std::size_t f = 0; f < folds.size(); ++f)
        for (std::size_t g = 0; g < folds.size(); ++g)
            if (g != f) train_idx[f].insert(train_idx[f].end(), folds[g].begin(), folds[g].end());

    BfgsConfig opt = spec.opt;
    if (plan.restarts > 0) opt.restarts = plan.restarts;

    CvResult result;
    for (double lambda : plan.lambda_grid)
        for (double mu : plan.mu_grid) result.cells.push_back({lambda, mu, std::vector<double>(folds.size()), 0.0});

    const std::size_t jobs = result.cells.size() * folds.size();
    parallel_for(jobs, threads, [&](std::size_t job) {
        auto& cell = result.cells[job / folds.size()];
        const std::size_t f = job % folds.size();
        const Dataset train = subset(data, train_idx[f]);
        const TwoLayerProblem problem(train.X, train.y, spec.inner, spec.outer);
        const auto settings = ObjectiveSettings::regression(cell.lambda, cell.mu, spec.gamma);
        const auto fit = fit_two_layer(problem, settings, opt);
        double score = fit.model.objective_value;
        if (plan.metric == CvMetric::HoldoutMse) {
            const Dataset held = subset(data, folds[f]);
            score = 0.0;
            for (Eigen::Index i = 0; i < held.X.cols(); ++i) {
                const double r = predict_two_layer(fit.model, held.X.col(i)) - held.y[i];
                score += r * r;
            }
            score /= static_cast<double>(held.X.cols());
        }
        cell.fold_scores[f] = score;
    });

    const CvCell* best = nullptr;
    for (auto& cell : result.cells) {
        cell.mean_score = std::accumulate(cell.fold_scores.begin(), cell.fold_scores.end(), 0.0) /
                          static_cast<double>(cell.fold_scores.size());
        if (!best || cell.mean_score < best->mean_score ||
            (cell.mean_score == best->mean_score &&
             std::pair(cell.lambda, cell.mu) > std::pair(best->lambda, best->mu)))
            best = &cell;
    }
    result.best_lambda = best->lambda;
    result.best_mu = best->mu;
    return result;
}

struct InnerTransform {
    PointSet points;
    Mat images;  // D x n
};

/// g(t) at every grid point.
inline InnerTransform inner_transform_dump(const TwoLayerModel& model, const EvalGrid& grid) {
    InnerTransform out{grid.points(), Mat()};
    out.images.resize(model.inner.output_dim(), out.points.cols());
    for (Eigen::Index i = 0; i < out.points.cols(); ++i) out.images.col(i) = model.inner_eval(out.points.col(i));
    return out;
}

struct ComparisonConfig {
    TestFunction function = TestFunction::H1;
    /// Replaces `function` for sampling and error grids when set.
    Predictor custom_target;
    TwoLayerSpec model;
    /// Kernel of the single-layer baseline on the input domain.
    ScalarKernel baseline_kernel = ScalarKernel::gauss(1.0);
    FitMode mode = FitMode::Interpolation;
    SamplingPlan sampling;
    CvPlan cv;
    EvalGrid grid;
    /// Skip cross-validation and use these (lambda, mu).
    std::optional<std::pair<double, double>> fixed_regularization;
    /// Candidate baseline ridge parameters; empty uses cv.lambda_grid.
    std::vector<double> baseline_lambdas;
};

struct ComparisonReport {
    Dataset data;
    TwoLayerFit fit;
    std::optional<CvResult> cv;
    SingleLayerModel baseline;
    ErrorGrid two_layer_errors;
    ErrorGrid single_layer_errors;
};

/// Two-layer fit against the single-layer baseline on one sampled data set.
///
/// Regression picks (lambda, mu) by cross-validation; the baseline ridge
/// parameter is the candidate with the smallest error on the evaluation grid.
inline ComparisonReport run_comparison(const ComparisonConfig& config, int threads = 1) {
    ComparisonReport report;
    const Predictor target = config.custom_target
                                 ? config.custom_target
                                 : Predictor([tf = config.function](const VecRef& p) { return eval_test_function(tf, p); });
    report.data = sample_dataset(target, config.sampling);
    const TwoLayerProblem problem(report.data.X, report.data.y, config.model.inner, config.model.outer);

    ObjectiveSettings settings = ObjectiveSettings::interpolation(config.model.gamma);
    if (config.mode == FitMode::Regression) {
        double lambda = 0.0;
        double mu = 0.0;
        if (config.fixed_regularization) {
            std::tie(lambda, mu) = *config.fixed_regularization;
        } else {
            report.cv = cross_validate(report.data, config.model, config.cv, threads);
            lambda = report.cv->best_lambda;
            mu = report.cv->best_mu;
        }
        settings = ObjectiveSettings::regression(lambda, mu, config.model.gamma);
    }
    report.fit = fit_two_layer(problem, settings, config.model.opt, threads);
    const auto& model = report.fit.model;
    report.two_layer_errors =
        pointwise_error_grid([&](const VecRef& x) { return predict_two_layer(model, x); }, target, config.grid);

    if (config.mode == FitMode::Interpolation) {
        report.baseline = fit_single(config.baseline_kernel, report.data.X, report.data.y, 0.0);
        report.single_layer_errors = pointwise_error_grid(
            [&](const VecRef& x) { return predict_single(report.baseline, x); }, target, config.grid);
    } else {
        const auto& lambdas = config.baseline_lambdas.empty() ? config.cv.lambda_grid : config.baseline_lambdas;
        if (lambdas.empty()) throw ArgumentError("run_comparison: no baseline lambda candidates");
        bool first = true;
        for (double lambda : lambdas) {
            auto candidate = fit_single(config.baseline_kernel, report.data.X, report.data.y, lambda);
            auto errors = pointwise_error_grid([&](const VecRef& x) { return predict_single(candidate, x); },
                                               target, config.grid);
            if (first || errors.mean < report.single_layer_errors.mean) {
                report.baseline = std::move(candidate);
                report.single_layer_errors = std::move(errors);
                first = false;
            }
        }
    }
    return report;
}

}  // namespace deepkern
