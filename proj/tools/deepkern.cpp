// deepkern command-line interface.
//
// Exit codes: 0 success, 2 input error, 3 numerical failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "deepkern/demo.hpp"
#include "deepkern/experiments.hpp"
#include "deepkern/io.hpp"
#include "deepkern/optimize.hpp"

namespace {

using namespace deepkern;

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct Globals {
    int threads = 0;
    std::optional<std::uint64_t> seed;
};

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    return out;
}

// Regularization for a regression run: explicit values or cross-validation.
ObjectiveSettings resolve_settings(const RunConfig& cfg, const Dataset& data, int threads) {
    if (cfg.mode == FitMode::Interpolation) return ObjectiveSettings::interpolation(cfg.gamma);
    if (!cfg.needs_cv()) return ObjectiveSettings::regression(*cfg.lambda, *cfg.mu, cfg.gamma);
    const auto cv = cross_validate(data, cfg.model_spec(), cfg.cv, threads);
    std::cerr << "cross-validation selected lambda=" << format_double(cv.best_lambda)
              << " mu=" << format_double(cv.best_mu) << '\n';
    return ObjectiveSettings::regression(cv.best_lambda, cv.best_mu, cfg.gamma);
}

int cmd_fit(const Globals& g, const std::string& config_path, const std::string& data_path, const std::string& out_path) {
    const auto cfg = load_run_config(config_path, g.seed);
    const auto data = read_dataset(data_path);
    const auto settings = resolve_settings(cfg, data, g.threads);
    const TwoLayerProblem problem(data.X, data.y, cfg.inner, cfg.outer);
    const auto fit = fit_two_layer(problem, settings, cfg.opt, g.threads);
    save_model(out_path, fit.model);
    std::cout << "objective=" << format_double(fit.model.objective_value) << '\n'
              << "restart_index=" << fit.optimization.restart_index << '\n'
              << "grad_norm=" << format_double(fit.optimization.grad_norm) << '\n'
              << "iterations=" << fit.optimization.iterations << '\n'
              << "converged=" << (fit.optimization.converged ? "true" : "false") << '\n';
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& points_path) {
    const auto model = load_model(model_path);
    const auto points = read_points(points_path);
    if (points.cols() > 0 && points.rows() != model.X.rows())
        throw InputError("points have dimension " + std::to_string(points.rows()) + " but the model expects " +
                         std::to_string(model.X.rows()));
    for (Eigen::Index k = 0; k < model.X.rows(); ++k) std::cout << 'x' << k + 1 << ',';
    std::cout << "prediction\n";
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
        for (Eigen::Index k = 0; k < points.rows(); ++k) std::cout << format_double(points(k, i)) << ',';
        std::cout << format_double(predict_two_layer(model, points.col(i))) << '\n';
    }
    return 0;
}

int cmd_demo(const Globals& g, const std::string& figure, const std::string& scale, const std::string& out_dir) {
    const auto result =
        run_demo(parse_demo_figure(figure), parse_demo_scale(scale), g.seed.value_or(0), g.threads);
    write_demo_outputs(result, out_dir);
    std::cout << format_demo_report(result);
    return 0;
}

int cmd_cv(const Globals& g, const std::string& config_path, const std::string& data_path) {
    const auto cfg = load_run_config(config_path, g.seed);
    const auto data = read_dataset(data_path);
    const auto cv = cross_validate(data, cfg.model_spec(), cfg.cv, g.threads);
    std::cout << "lambda,mu,mean_score";
    for (int f = 0; f < cfg.cv.folds; ++f) std::cout << ",fold" << f + 1;
    std::cout << '\n';
    for (const auto& cell : cv.cells) {
        std::cout << format_double(cell.lambda) << ',' << format_double(cell.mu) << ',' << format_double(cell.mean_score);
        for (double s : cell.fold_scores) std::cout << ',' << format_double(s);
        std::cout << '\n';
    }
    std::cerr << "best_lambda=" << format_double(cv.best_lambda) << " best_mu=" << format_double(cv.best_mu) << '\n';
    return 0;
}

int cmd_gradcheck(const Globals& g, const std::string& config_path, const std::string& data_path, int instances,
                  double h, double tol) {
    const auto cfg = load_run_config(config_path, g.seed);
    const auto data = read_dataset(data_path);
    if (instances < 1) throw InputError("--instances must be positive");
    ObjectiveSettings settings = ObjectiveSettings::interpolation(cfg.gamma);
    if (cfg.mode == FitMode::Regression)
        settings = ObjectiveSettings::regression(cfg.lambda.value_or(cfg.cv.lambda_grid.front()),
                                                 cfg.mu.value_or(cfg.cv.mu_grid.front()), cfg.gamma);
    const TwoLayerProblem problem(data.X, data.y, cfg.inner, cfg.outer);
    bool all_passed = true;
    std::cout << "instance,max_rel_err,worst_component,passed\n";
    for (int k = 0; k < instances; ++k) {
        const Vec c = initial_point(problem.num_coefficients(), cfg.opt, k);
        const auto report = grad_check(
            [&](const Vec& x) { return problem.evaluate(x, settings, false).value; },
            [&](const Vec& x) { return problem.evaluate(x, settings, true).gradient; }, c, h, tol);
        all_passed = all_passed && report.passed;
        std::cout << k << ',' << format_double(report.max_rel_err) << ',' << report.worst_component << ','
                  << (report.passed ? "true" : "false") << '\n';
    }
    return all_passed ? 0 : kExitNumerical;
}

int cmd_error_grid(const std::string& model_path, const std::string& function, double meshwidth,
                   const std::string& out_path) {
    const auto model = load_model(model_path);
    if (model.X.rows() != 2) throw InputError("error-grid needs a model on two-dimensional inputs");
    EvalGrid grid;
    grid.meshwidth = meshwidth;
    const auto errors = pointwise_error_grid([&](const VecRef& x) { return predict_two_layer(model, x); },
                                             parse_test_function(function), grid);
    auto out = open_output(out_path);
    write_error_grid(out, errors);
    std::cout << "grid_points=" << errors.errors.size() << '\n'
              << "mean_error=" << format_double(errors.mean) << '\n'
              << "max_error=" << format_double(errors.max) << '\n'
              << "frac_above_10pct=" << format_double(errors.frac_above_10pct) << '\n';
    return 0;
}

int cmd_inner_map(const std::string& model_path, double meshwidth, const std::string& out_path) {
    const auto model = load_model(model_path);
    if (model.X.rows() != 2) throw InputError("inner-map needs a model on two-dimensional inputs");
    EvalGrid grid;
    grid.meshwidth = meshwidth;
    const auto map = inner_transform_dump(model, grid);
    auto out = open_output(out_path);
    write_inner_transform(out, map);
    std::cout << "grid_points=" << map.points.cols() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-layer kernel learning: fit, predict and reproduce experiments."};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    std::uint64_t seed_value = 0;
    app.add_option("--threads", g.threads, "Worker threads (0 = all cores; DEEPKERN_THREADS overrides)")
        ->check(CLI::NonNegativeNumber);
    auto* seed_opt = app.add_option("--seed", seed_value, "Master seed for all random streams");

    std::string config, data, out, model, points, figure, scale, function = "h1";
    int instances = 20;
    double h = 1e-6, tol = 1e-5, meshwidth = 1.0 / 50.0;

    auto* fit = app.add_subcommand("fit", "Fit a two-layer model");
    fit->add_option("--config", config)->required();
    fit->add_option("--data", data)->required();
    fit->add_option("--out", out)->required();

    auto* predict = app.add_subcommand("predict", "Evaluate a model on points");
    predict->add_option("--model", model)->required();
    predict->add_option("--points", points)->required();

    auto* demo = app.add_subcommand("demo", "Reproduce a comparison experiment");
    demo->add_option("--figure", figure)
        ->required()
        ->check(CLI::IsMember({"int-h1", "int-h2", "reg-h1", "reg-h2", "linout-h1", "linout-h2"}));
    demo->add_option("--scale", scale)->required()->check(CLI::IsMember({"paper", "desk"}));
    out = ".";
    demo->add_option("--out", out, "Output directory");

    auto* cv = app.add_subcommand("cv", "Cross-validate lambda and mu");
    cv->add_option("--config", config)->required();
    cv->add_option("--data", data)->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    gradcheck->add_option("--config", config)->required();
    gradcheck->add_option("--data", data)->required();
    gradcheck->add_option("--instances", instances);
    gradcheck->add_option("--step", h, "Finite-difference step");
    gradcheck->add_option("--tol", tol);

    auto* error_grid = app.add_subcommand("error-grid", "Pointwise error of a model against a test function");
    error_grid->add_option("--model", model)->required();
    error_grid->add_option("--function", function)->check(CLI::IsMember({"h1", "h2"}));
    error_grid->add_option("--meshwidth", meshwidth);
    error_grid->add_option("--out", out)->required();

    auto* inner_map = app.add_subcommand("inner-map", "Images of the grid under the inner function");
    inner_map->add_option("--model", model)->required();
    inner_map->add_option("--meshwidth", meshwidth);
    inner_map->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }
    if (*seed_opt) g.seed = seed_value;

    try {
        if (*fit) return cmd_fit(g, config, data, out);
        if (*predict) return cmd_predict(model, points);
        if (*demo) return cmd_demo(g, figure, scale, out);
        if (*cv) return cmd_cv(g, config, data);
        if (*gradcheck) return cmd_gradcheck(g, config, data, instances, h, tol);
        if (*error_grid) return cmd_error_grid(model, function, meshwidth, out);
        if (*inner_map) return cmd_inner_map(model, meshwidth, out);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const SingularityError& e) {
        std::cerr << "numerical failure: " << e.what() << " (condition estimate " << e.condition_estimate() << ")\n";
        return kExitNumerical;
    } catch (const OptimizationError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitInput;
}
