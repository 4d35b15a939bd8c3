#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "deepkern/deep_model.hpp"
#include "deepkern/experiments.hpp"
#include "deepkern/numeric_text.hpp"
#include "deepkern/random.hpp"

namespace deepkern {

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    return in;
}

inline std::string join_doubles(const double* data, Eigen::Index n) {
    std::string out;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (i) out += ',';
        out += format_double(data[i]);
    }
    return out;
}

inline std::vector<double> parse_double_list(std::string_view text) {
    std::vector<double> out;
    if (trim(text).empty()) return out;
    for (auto f : split_fields(text)) out.push_back(parse_double(f));
    return out;
}

}  // namespace detail

/// Rows of a headed CSV table of reals. `header` receives the column names.
struct CsvTable {
    std::vector<std::string> header;
    Mat rows;  // one row per record
};

inline CsvTable read_csv_table(std::istream& in, const std::string& source) {
    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::vector<std::vector<double>> records;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = detail::split_fields(line);
        if (!have_header) {
            for (auto f : fields) table.header.emplace_back(f);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size())
            throw InputError(source + ": line " + std::to_string(line_no) + ": expected " +
                             std::to_string(table.header.size()) + " fields, found " + std::to_string(fields.size()));
        std::vector<double> rec;
        for (auto f : fields) {
            try {
                rec.push_back(parse_double(f));
            } catch (const InputError& e) {
                throw InputError(source + ": line " + std::to_string(line_no) + ": " + e.what());
            }
            if (!std::isfinite(rec.back()))
                throw InputError(source + ": line " + std::to_string(line_no) + ": non-finite value");
        }
        records.push_back(std::move(rec));
    }
    if (!have_header) throw InputError(source + ": missing header line");
    table.rows.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(table.header.size()));
    for (std::size_t i = 0; i < records.size(); ++i)
        for (std::size_t k = 0; k < records[i].size(); ++k)
            table.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = records[i][k];
    return table;
}

/// Dataset CSV with header x1,...,xd,y.
inline Dataset read_dataset(std::istream& in, const std::string& source = "dataset") {
    const auto table = read_csv_table(in, source);
    const auto cols = table.header.size();
    if (cols < 2 || table.header.back() != "y") throw InputError(source + ": header must be x1,...,xd,y");
    for (std::size_t k = 0; k + 1 < cols; ++k)
        if (table.header[k] != "x" + std::to_string(k + 1)) throw InputError(source + ": header must be x1,...,xd,y");
    if (table.rows.rows() == 0) throw InputError(source + ": no data rows");
    const auto d = static_cast<Eigen::Index>(cols - 1);
    return {table.rows.leftCols(d).transpose(), table.rows.col(d)};
}

inline Dataset read_dataset(const std::string& path) {
    auto in = detail::open_input(path);
    return read_dataset(in, path);
}

inline void write_dataset(std::ostream& out, const Dataset& data) {
    for (Eigen::Index k = 0; k < data.X.rows(); ++k) out << 'x' << k + 1 << ',';
    out << "y\n";
    for (Eigen::Index i = 0; i < data.X.cols(); ++i) {
        for (Eigen::Index k = 0; k < data.X.rows(); ++k) out << format_double(data.X(k, i)) << ',';
        out << format_double(data.y[i]) << '\n';
    }
}

/// Points CSV with header x1,...,xd; a trailing y column is ignored.
inline PointSet read_points(std::istream& in, const std::string& source = "points") {
    const auto table = read_csv_table(in, source);
    auto cols = table.header.size();
    if (cols > 0 && table.header.back() == "y") --cols;
    if (cols == 0) throw InputError(source + ": header must be x1,...,xd");
    for (std::size_t k = 0; k < cols; ++k)
        if (table.header[k] != "x" + std::to_string(k + 1)) throw InputError(source + ": header must be x1,...,xd");
    return table.rows.leftCols(static_cast<Eigen::Index>(cols)).transpose();
}

inline PointSet read_points(const std::string& path) {
    auto in = detail::open_input(path);
    return read_points(in, path);
}

inline void write_error_grid(std::ostream& out, const ErrorGrid& grid) {
    out << "t1,t2,abs_error\n";
    for (Eigen::Index i = 0; i < grid.points.cols(); ++i)
        out << format_double(grid.points(0, i)) << ',' << format_double(grid.points(1, i)) << ','
            << format_double(grid.errors[i]) << '\n';
}

inline void write_inner_transform(std::ostream& out, const InnerTransform& t) {
    out << "t1,t2";
    for (Eigen::Index l = 0; l < t.images.rows(); ++l) out << ",g" << l + 1;
    out << '\n';
    for (Eigen::Index i = 0; i < t.points.cols(); ++i) {
        out << format_double(t.points(0, i)) << ',' << format_double(t.points(1, i));
        for (Eigen::Index l = 0; l < t.images.rows(); ++l) out << ',' << format_double(t.images(l, i));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Model files: flat key=value lines, doubles in shortest round-trip form.

inline constexpr std::string_view kModelFormat = "deepkern-two-layer-1";

inline void write_model(std::ostream& out, const TwoLayerModel& model) {
    out << "format=" << kModelFormat << '\n'
        << "outer=" << model.outer.to_string() << '\n'
        << "inner=" << model.inner.to_string() << '\n'
        << "dim=" << model.X.rows() << '\n'
        << "num_points=" << model.X.cols() << '\n'
        << "num_centers=" << model.centers.cols() << '\n'
        << "lambda=" << format_double(model.lambda) << '\n'
        << "mu=" << format_double(model.mu) << '\n'
        << "gamma=" << format_double(model.gamma) << '\n'
        << "objective=" << format_double(model.objective_value) << '\n'
        << "points=" << detail::join_doubles(model.X.data(), model.X.size()) << '\n'
        << "centers=" << detail::join_doubles(model.centers.data(), model.centers.size()) << '\n'
        << "c=" << detail::join_doubles(model.c.data(), model.c.size()) << '\n'
        << "alpha=" << detail::join_doubles(model.alpha.data(), model.alpha.size()) << '\n';
}

inline TwoLayerModel read_model(std::istream& in, const std::string& source = "model") {
    std::map<std::string, std::string, std::less<>> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InputError(source + ": line " + std::to_string(line_no) + ": expected key=value");
        kv[std::string(trim(std::string_view(line).substr(0, eq)))] = std::string(trim(std::string_view(line).substr(eq + 1)));
    }
    auto get = [&](std::string_view key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw InputError(source + ": missing key '" + std::string(key) + "'");
        return it->second;
    };
    try {
        if (get("format") != kModelFormat) throw InputError(source + ": unsupported model format");
        const auto d = static_cast<Eigen::Index>(parse_integer(get("dim")));
        const auto n = static_cast<Eigen::Index>(parse_integer(get("num_points")));
        const auto m = static_cast<Eigen::Index>(parse_integer(get("num_centers")));
        if (d < 1 || n < 1 || m < 1) throw InputError(source + ": dimensions must be positive");
        auto matrix = [&](std::string_view key, Eigen::Index rows, Eigen::Index cols) {
            const auto values = detail::parse_double_list(get(key));
            if (static_cast<Eigen::Index>(values.size()) != rows * cols)
                throw InputError(source + ": '" + std::string(key) + "' has the wrong number of entries");
            return Mat(Eigen::Map<const Mat>(values.data(), rows, cols));
        };
        TwoLayerModel model;
        model.X = matrix("points", d, n);
        model.centers = matrix("centers", d, m);
        model.inner = MatrixKernel::parse(get("inner"));
        model.outer = ScalarKernel::parse(get("outer"));
        model.c = matrix("c", model.inner.output_dim(), m);
        model.alpha = matrix("alpha", n, 1).col(0);
        model.lambda = parse_double(get("lambda"));
        model.mu = parse_double(get("mu"));
        model.gamma = parse_double(get("gamma"));
        model.objective_value = parse_double(get("objective"));
        model.refresh_images();
        return model;
    } catch (const ArgumentError& e) {
        throw InputError(source + ": " + e.what());
    }
}

inline void save_model(const std::string& path, const TwoLayerModel& model) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    write_model(out, model);
}

inline TwoLayerModel load_model(const std::string& path) {
    auto in = detail::open_input(path);
    return read_model(in, path);
}

// ---------------------------------------------------------------------------
// JSON run configuration.

struct RunConfig {
    FitMode mode = FitMode::Interpolation;
    ScalarKernel outer = ScalarKernel::gauss(1.0);
    MatrixKernel inner = MatrixKernel::diag_scaled(ScalarKernel::poly(1), {1.0, 1.0});
    std::optional<double> lambda;
    std::optional<double> mu;
    double gamma = 0.0;
    BfgsConfig opt;
    CvPlan cv;
    std::uint64_t seed = 0;

    /// Regression without both lambda and mu is resolved by cross-validation.
    bool needs_cv() const { return mode == FitMode::Regression && !(lambda && mu); }

    TwoLayerSpec model_spec() const { return {outer, inner, gamma, opt}; }
};

namespace detail {

using nlohmann::json;

template <typename T>
T json_get(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw InputError(std::string("config: key '") + key + "' has the wrong type");
    }
}

inline ScalarKernel parse_kernel_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw InputError("config: " + where + " must be an object");
    const auto family = json_get<std::string>(j, "family", "");
    if (family == "poly") return ScalarKernel::poly(json_get<int>(j, "p", 1));
    if (family == "gauss") return ScalarKernel::gauss(json_get<double>(j, "sigma", 1.0));
    if (family == "tensor_matern") return ScalarKernel::tensor_matern(json_get<int>(j, "s", 1));
    throw InputError("config: " + where + ".family must be poly, gauss or tensor_matern");
}

inline std::vector<double> json_grid(const json& j, const char* key, std::vector<double> fallback) {
    if (!j.contains(key)) return fallback;
    const auto values = json_get<std::vector<double>>(j, key, {});
    if (values.empty()) throw InputError(std::string("config: cv.") + key + " must be nonempty");
    return values;
}

}  // namespace detail

/// Parses the JSON configuration. Unset optimizer and fold seeds are derived
/// from the master seed so that every random stream follows one number.
inline RunConfig parse_run_config(std::string_view text, std::optional<std::uint64_t> seed_override = std::nullopt) {
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw InputError("config: top level must be an object");
    RunConfig cfg;
    try {
        cfg.seed = seed_override.value_or(detail::json_get<std::uint64_t>(j, "seed", 0));
        const auto mode = detail::json_get<std::string>(j, "mode", "interpolate");
        if (mode == "interpolate" || mode == "interpolation") cfg.mode = FitMode::Interpolation;
        else if (mode == "regress" || mode == "regression") cfg.mode = FitMode::Regression;
        else throw InputError("config: mode must be interpolate or regress");

        if (j.contains("kernel")) cfg.outer = detail::parse_kernel_json(j["kernel"], "kernel");
        if (j.contains("inner")) {
            const auto& in = j["inner"];
            if (!in.is_object()) throw InputError("config: inner must be an object");
            const auto family = detail::json_get<std::string>(in, "family", "diag_scaled");
            if (family == "diag_scaled") {
                const auto base = in.contains("kernel") ? detail::parse_kernel_json(in["kernel"], "inner.kernel")
                                                        : ScalarKernel::poly(1);
                cfg.inner = MatrixKernel::diag_scaled(base, detail::json_get<std::vector<double>>(in, "weights", {1.0, 1.0}));
            } else if (family == "diag_mixture") {
                if (!in.contains("components") || !in["components"].is_array())
                    throw InputError("config: inner.components must be an array");
                std::vector<ScalarKernel> comps;
                for (const auto& c : in["components"]) comps.push_back(detail::parse_kernel_json(c, "inner.components[]"));
                cfg.inner = MatrixKernel::diag_mixture(std::move(comps));
            } else {
                throw InputError("config: inner.family must be diag_scaled or diag_mixture");
            }
        }
        if (j.contains("lambda")) cfg.lambda = detail::json_get<double>(j, "lambda", 0.0);
        if (j.contains("mu")) cfg.mu = detail::json_get<double>(j, "mu", 0.0);
        cfg.gamma = detail::json_get<double>(j, "gamma", 0.0);

        cfg.opt.seed = derive_seed(cfg.seed, "init");
        if (j.contains("opt")) {
            const auto& o = j["opt"];
            cfg.opt.restarts = detail::json_get<int>(o, "restarts", cfg.opt.restarts);
            cfg.opt.max_iters = detail::json_get<int>(o, "max_iters", cfg.opt.max_iters);
            cfg.opt.grad_tol = detail::json_get<double>(o, "grad_tol", cfg.opt.grad_tol);
            cfg.opt.init_scale = detail::json_get<double>(o, "init_scale", cfg.opt.init_scale);
            if (o.contains("seed") && !seed_override) cfg.opt.seed = detail::json_get<std::uint64_t>(o, "seed", 0);
        }
        cfg.opt.validate();

        cfg.cv.seed = derive_seed(cfg.seed, "folds");
        if (j.contains("cv")) {
            const auto& c = j["cv"];
            cfg.cv.folds = detail::json_get<int>(c, "folds", cfg.cv.folds);
            cfg.cv.lambda_grid = detail::json_grid(c, "lambda_grid", cfg.cv.lambda_grid);
            cfg.cv.mu_grid = detail::json_grid(c, "mu_grid", cfg.cv.mu_grid);
            cfg.cv.restarts = detail::json_get<int>(c, "restarts", cfg.cv.restarts);
            const auto metric = detail::json_get<std::string>(c, "metric", "holdout_mse");
            if (metric == "holdout_mse") cfg.cv.metric = CvMetric::HoldoutMse;
            else if (metric == "train_objective") cfg.cv.metric = CvMetric::TrainObjective;
            else throw InputError("config: cv.metric must be holdout_mse or train_objective");
        }
        cfg.cv.validate();
        if (cfg.cv.restarts < 0) throw InputError("config: cv.restarts must be >= 0");
        if (cfg.mode == FitMode::Regression && cfg.lambda && cfg.mu)
            ObjectiveSettings::regression(*cfg.lambda, *cfg.mu, cfg.gamma).validate();
        if (!(cfg.gamma >= 0.0)) throw InputError("config: gamma must be nonnegative");
    } catch (const ArgumentError& e) {
        throw InputError(std::string("config: ") + e.what());
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
    auto in = detail::open_input(path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str(), seed_override);
}

}  // namespace deepkern
