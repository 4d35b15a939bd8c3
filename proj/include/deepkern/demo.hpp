#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "deepkern/experiments.hpp"
#include "deepkern/io.hpp"
#include "deepkern/random.hpp"

namespace deepkern {

enum class DemoFigure { IntH1, IntH2, RegH1, RegH2, LinoutH1, LinoutH2 };
enum class DemoScale { Paper, Desk };

inline DemoFigure parse_demo_figure(std::string_view name) {
    if (name == "int-h1") return DemoFigure::IntH1;
    if (name == "int-h2") return DemoFigure::IntH2;
    if (name == "reg-h1") return DemoFigure::RegH1;
    if (name == "reg-h2") return DemoFigure::RegH2;
    if (name == "linout-h1") return DemoFigure::LinoutH1;
    if (name == "linout-h2") return DemoFigure::LinoutH2;
    throw InputError("unknown figure: " + std::string(name));
}

inline std::string to_string(DemoFigure f) {
    switch (f) {
    case DemoFigure::IntH1: return "int-h1";
    case DemoFigure::IntH2: return "int-h2";
    case DemoFigure::RegH1: return "reg-h1";
    case DemoFigure::RegH2: return "reg-h2";
    case DemoFigure::LinoutH1: return "linout-h1";
    case DemoFigure::LinoutH2: return "linout-h2";
    }
    return "";
}

inline DemoScale parse_demo_scale(std::string_view name) {
    if (name == "paper") return DemoScale::Paper;
    if (name == "desk") return DemoScale::Desk;
    throw InputError("unknown scale: " + std::string(name));
}

inline std::string to_string(DemoScale s) { return s == DemoScale::Paper ? "paper" : "desk"; }

struct ScaleSettings {
    int n_samples;
    int restarts;
    int cv_restarts;
};

inline ScaleSettings scale_settings(DemoScale scale) {
    return scale == DemoScale::Paper ? ScaleSettings{100, 64, 8} : ScaleSettings{50, 16, 2};
}

/// One fitted configuration of a demo; linear-outer demos have two.
struct DemoArm {
    std::string name;
    ComparisonConfig config;
};

inline std::vector<DemoArm> demo_arms(DemoFigure figure, DemoScale scale, std::uint64_t seed) {
    const auto s = scale_settings(scale);
    const bool h1 = figure == DemoFigure::IntH1 || figure == DemoFigure::RegH1 || figure == DemoFigure::LinoutH1;

    ComparisonConfig base;
    base.function = h1 ? TestFunction::H1 : TestFunction::H2;
    base.sampling.n_samples = s.n_samples;
    base.sampling.seed = derive_seed(seed, "sampling");
    base.model.opt.restarts = s.restarts;
    base.model.opt.seed = derive_seed(seed, "init");
    base.cv.seed = derive_seed(seed, "folds");
    base.cv.restarts = s.cv_restarts;

    const auto poly1_inner = MatrixKernel::diag_scaled(ScalarKernel::poly(1), {1.0, 1.0});
    switch (figure) {
    case DemoFigure::IntH1:
    case DemoFigure::IntH2: {
        base.mode = FitMode::Interpolation;
        base.model.outer = ScalarKernel::tensor_matern(1);
        base.model.inner = poly1_inner;
        base.baseline_kernel = base.model.outer;
        return {{"fit", base}};
    }
    case DemoFigure::RegH1:
    case DemoFigure::RegH2: {
        base.mode = FitMode::Regression;
        base.model.outer = ScalarKernel::gauss(0.1);
        base.model.inner = poly1_inner;
        base.baseline_kernel = base.model.outer;
        return {{"fit", base}};
    }
    case DemoFigure::LinoutH1:
    case DemoFigure::LinoutH2: {
        base.mode = FitMode::Regression;
        base.model.inner = MatrixKernel::diag_mixture({ScalarKernel::gauss(0.1), ScalarKernel::gauss(1.0),
                                                       ScalarKernel::gauss(10.0), ScalarKernel::poly(1),
                                                       ScalarKernel::poly(2)});
        base.cv.lambda_grid = powers_of_ten_grid();
        base.cv.mu_grid = powers_of_ten_grid();
        base.baseline_kernel = ScalarKernel::tensor_matern(1);
        DemoArm linear{"setting1", base};
        linear.config.model.outer = ScalarKernel::poly(1);
        DemoArm matern{"setting2", base};
        matern.config.model.outer = ScalarKernel::tensor_matern(1);
        return {linear, matern};
    }
    }
    throw ArgumentError("demo_arms: unknown figure");
}

struct DemoResult {
    DemoFigure figure;
    DemoScale scale;
    std::uint64_t seed;
    std::vector<DemoArm> arms;
    std::vector<ComparisonReport> reports;
};

inline DemoResult run_demo(DemoFigure figure, DemoScale scale, std::uint64_t seed, int threads = 1) {
    DemoResult result{figure, scale, seed, demo_arms(figure, scale, seed), {}};
    for (const auto& arm : result.arms) result.reports.push_back(run_comparison(arm.config, threads));
    return result;
}

inline void write_report(std::ostream& out, const DemoArm& arm, const ComparisonReport& r) {
    const auto& p = arm.name;
    const auto& fit = r.fit;
    auto kv = [&](const std::string& key, const std::string& value) { out << p << '.' << key << '=' << value << '\n'; };
    kv("outer", arm.config.model.outer.to_string());
    kv("inner", arm.config.model.inner.to_string());
    kv("baseline_kernel", arm.config.baseline_kernel.to_string());
    kv("mode", arm.config.mode == FitMode::Interpolation ? "interpolate" : "regress");
    kv("lambda", format_double(fit.model.lambda));
    kv("mu", format_double(fit.model.mu));
    kv("objective", format_double(fit.model.objective_value));
    kv("restart_index", std::to_string(fit.optimization.restart_index));
    kv("iterations", std::to_string(fit.optimization.iterations));
    kv("grad_norm", format_double(fit.optimization.grad_norm));
    kv("converged", fit.optimization.converged ? "true" : "false");
    kv("baseline_lambda", format_double(r.baseline.lambda));
    kv("grid_points", std::to_string(r.two_layer_errors.errors.size()));
    kv("h_sup", format_double(r.two_layer_errors.h_sup));
    kv("two_layer.mean_error", format_double(r.two_layer_errors.mean));
    kv("two_layer.max_error", format_double(r.two_layer_errors.max));
    kv("two_layer.frac_above_10pct", format_double(r.two_layer_errors.frac_above_10pct));
    kv("single_layer.mean_error", format_double(r.single_layer_errors.mean));
    kv("single_layer.max_error", format_double(r.single_layer_errors.max));
    kv("single_layer.frac_above_10pct", format_double(r.single_layer_errors.frac_above_10pct));
}

inline std::string format_demo_report(const DemoResult& result) {
    std::ostringstream out;
    out << "figure=" << to_string(result.figure) << '\n'
        << "scale=" << to_string(result.scale) << '\n'
        << "seed=" << result.seed << '\n'
        << "n_samples=" << result.arms.front().config.sampling.n_samples << '\n'
        << "restarts=" << result.arms.front().config.model.opt.restarts << '\n';
    for (std::size_t i = 0; i < result.arms.size(); ++i) write_report(out, result.arms[i], result.reports[i]);
    return out.str();
}

/// report.txt plus per-arm data, error-grid and inner-map CSVs. Returns the written paths.
inline std::vector<std::filesystem::path> write_demo_outputs(const DemoResult& result,
                                                             const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    auto open = [&](const std::string& name) {
        written.push_back(dir / name);
        std::ofstream f(written.back());
        if (!f) throw InputError("cannot write " + written.back().string());
        return f;
    };
    {
        auto f = open("report.txt");
        f << format_demo_report(result);
    }
    for (std::size_t i = 0; i < result.arms.size(); ++i) {
        const auto& name = result.arms[i].name;
        const auto& r = result.reports[i];
        {
            auto f = open(name + "_data.csv");
            write_dataset(f, r.data);
        }
        {
            auto f = open(name + "_errors.csv");
            write_error_grid(f, r.two_layer_errors);
        }
        {
            auto f = open(name + "_baseline_errors.csv");
            write_error_grid(f, r.single_layer_errors);
        }
        {
            auto f = open(name + "_inner_map.csv");
            write_inner_transform(f, inner_transform_dump(r.fit.model, result.arms[i].config.grid));
        }
    }
    return written;
}

}  // namespace deepkern
