// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "deepkern/deep_stack.hpp"
#include "deepkern/demo.hpp"
#include "deepkern/gram.hpp"
#include "deepkern/single_layer.hpp"
#include "test_support.hpp"

using namespace deepkern;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool passed;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(3);
    s << v;
    return s.str();
}

// 1. Analytic gradients against central differences (h = 1e-6) over 200 instances
// cycling through the experiment pairings. The difference quotient is taken of an
// extended-precision evaluation of the objective so that the comparison measures
// the gradient rather than double-precision cancellation in the quotient.
Outcome gradient_suite() {
    const auto start = Clock::now();
    const auto pairings = experiment_pairings();
    std::mt19937_64 rng(20240601);
    int checked = 0, failed = 0, double_fd_failed = 0;
    double worst = 0.0, worst_double_fd = 0.0;
    for (int t = 0; t < 200; ++t) {
        const auto& p = pairings[static_cast<std::size_t>(t) % pairings.size()];
        const Eigen::Index N = (t / static_cast<int>(pairings.size())) % 2 ? 8 : 4;
        for (;;) {
            const PointSet X = uniform_points(rng, 2, N);
            const Vec y = uniform_points(rng, 1, N).row(0).transpose();
            const TwoLayerProblem prob(X, y, p.inner, p.outer);
            const Vec c = normal_vector(rng, prob.num_coefficients(), p.coeff_scale);
            // The Matern outer kernel is not differentiable where two images share a coordinate.
            if (p.outer.family() == KernelFamily::TensorMatern && min_coordinate_gap(prob.images(prob.coefficients(c))) < 1e-4)
                continue;
            std::vector<ObjectiveSettings> objectives{ObjectiveSettings::regression(0.1, 0.1)};
            // A linear outer kernel gives a rank-deficient Q, so only the regression objective applies.
            if (p.outer.family() != KernelFamily::Poly) objectives.push_back(ObjectiveSettings::interpolation());
            for (const auto& s : objectives) {
                const Vec analytic = prob.evaluate(c, s, true).gradient;
                const double e = gradient_mismatch(analytic, ref_fd_gradient(X, y, p.inner, p.outer, c, s, 1e-6));
                worst = std::max(worst, e);
                failed += e > 1e-5;
                const Vec plain = finite_diff_grad([&](const Vec& x) { return prob.evaluate(x, s, false).value; }, c, 1e-6);
                const double ed = gradient_mismatch(analytic, plain);
                worst_double_fd = std::max(worst_double_fd, ed);
                double_fd_failed += ed > 1e-5;
                ++checked;
            }
            break;
        }
    }
    const double secs = seconds_since(start);
    return {failed == 0 && secs <= 60.0,
            std::to_string(checked) + " gradients on 200 instances, worst rel err " + fmt(worst) + ", " +
                fmt(secs) + " s; double-precision quotient for reference: worst " + fmt(worst_double_fd) + ", " +
                std::to_string(double_fd_failed) + " above 1e-5"};
}

// 2. Multi-layer kernel combination identity.
Outcome mlmkl_identity() {
    const auto start = Clock::now();
    std::mt19937_64 rng(7);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const PointSet U = uniform_points(rng, 2, 6);
        const auto r = mlmkl_equivalence_check(ScalarKernel::gauss(0.5 + 0.1 * (t % 10)), ScalarKernel::poly(1), U,
                                               normal_vector(rng, 6), uniform_points(rng, 2, 1).col(0),
                                               uniform_points(rng, 2, 1).col(0));
        worst = std::max(worst, std::abs(r.lhs - r.rhs) / (std::abs(r.lhs) + 1.0));
    }
    const double secs = seconds_since(start);
    return {worst <= 1e-12 && secs <= 5.0, "worst |lhs - rhs| / (|lhs| + 1) = " + fmt(worst) + ", " + fmt(secs) + " s"};
}

// 3. Closed-form examples.
Outcome closed_forms() {
    std::vector<std::pair<std::string, bool>> checks;
    auto near = [&](const std::string& name, double got, double want, double tol) {
        checks.emplace_back(name, std::abs(got - want) <= tol);
    };
    const double pi = std::numbers::pi;
    PointSet x1(2, 1);
    x1 << 0.1, 0.9;

    near("interpolation N=1 gauss", solve_interpolation(ScalarKernel::gauss(1.0), x1, Vec::Constant(1, 3.0))[0], 3.0, 1e-15);
    near("interpolation N=1 matern", solve_interpolation(ScalarKernel::tensor_matern(1), x1, Vec::Constant(1, pi / 2))[0], 1.0,
         1e-14);
    near("ridge N=1 gauss", solve_ridge(ScalarKernel::gauss(1.0), x1, Vec::Constant(1, 2.0), 1.0)[0], 1.0, 1e-15);
    near("single-layer ridge N=1", fit_single(ScalarKernel::gauss(1.0), x1, Vec::Constant(1, 5.0), 4.0).alpha[0], 1.0, 1e-15);
    near("rkhs norm poly", rkhs_norm_sq_single(fit_single(ScalarKernel::poly(1), Mat::Identity(2, 2), Vec::Constant(2, 3.0), 0.0)),
         6.0, 1e-13);
    near("energy 2x2", energy_quadratic_form((Mat(2, 2) << 2, 1, 1, 2).finished(), Vec::Ones(2)), 2.0 / 3.0, 1e-15);

    const auto gauss_inner = MatrixKernel::diag_scaled(ScalarKernel::gauss(1.0), {1.0, 1.0});
    const auto poly_inner = MatrixKernel::diag_scaled(ScalarKernel::poly(1), {1.0, 1.0});
    {
        const TwoLayerProblem one(x1, Vec::Constant(1, 2.0), poly_inner, ScalarKernel::gauss(1.0));
        near("interp objective N=1 c=0", one.objective_interp(Mat::Zero(2, 1)), 4.0, 1e-15);
        near("reg objective N=1 c=0", one.objective_reg(Mat::Zero(2, 1), 1.0, 1.0), 2.0, 1e-15);
        const TwoLayerProblem g(x1, Vec::Ones(1), gauss_inner, ScalarKernel::gauss(1.0));
        near("inner norm 13", g.inner_norm_sq((Mat(2, 1) << 2, 3).finished()), 13.0, 1e-14);
    }
    {
        PointSet far(2, 2);
        far << 0, 100, 0, 100;
        const TwoLayerProblem p(far, Vec::Ones(2), gauss_inner, ScalarKernel::gauss(1.0));
        near("coth(1)", p.penalty_coth((Mat(2, 2) << 0, 1, 0, 0).finished(), 1.0), 1.313035, 1e-6);
    }
    near("matern sqrt(pi/2) e^-1", ScalarKernel::tensor_matern(1)(Vec::Zero(1), Vec::Ones(1)), 0.461069, 1e-6);
    for (double r : {0.3, 1.0, 4.0}) {
        const double k12 = std::sqrt(pi / (2 * r)) * std::exp(-r);
        near("bessel K_5/2(" + fmt(r) + ")", bessel_k_half(2, r), k12 * (1 + 3 / r + 3 / (r * r)), 1e-13 * k12 * 10);
    }

    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const PointSet X = uniform_points(rng, 2, 5);
        const Vec y = normal_vector(rng, 5);
        const InnerCoefficients c = Eigen::Map<const Mat>(normal_vector(rng, 10, 0.5).eval().data(), 2, 5);
        const auto K = MatrixKernel::diag_scaled(ScalarKernel::gauss(0.6), {1.5, 0.5});
        const TwoLayerProblem p(X, y, K, ScalarKernel::tensor_matern(1));
        Mat B(10, 10);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) B.block(2 * i, 2 * j, 2, 2) = K(X.col(i), X.col(j));
        const Vec flat = TwoLayerProblem::flatten(c);
        checks.emplace_back("block-matrix norm oracle", rel_err(p.inner_norm_sq(c), flat.dot(B * flat)) <= 1e-12);

        const Mat Q = p.q_matrix(c);
        const double lambda = 0.05, mu = 0.3;
        const Vec alpha = (Q + lambda * Mat::Identity(5, 5)).inverse() * y;
        const double rhs = (Q * alpha - y).squaredNorm() + lambda * alpha.dot(Q * alpha) + mu * flat.dot(B * flat);
        checks.emplace_back("alpha-side regression identity", rel_err(p.objective_reg(c, lambda, mu), rhs) <= 1e-10);
        checks.emplace_back("dense-inverse interpolation oracle",
                            rel_err(p.objective_interp(c), y.dot(Q.inverse() * y) + flat.dot(B * flat)) <= 1e-10);
    }

    int failed = 0;
    std::string names;
    for (const auto& [name, ok] : checks)
        if (!ok) {
            ++failed;
            names += " [" + name + "]";
        }
    return {failed == 0, std::to_string(checks.size() - static_cast<std::size_t>(failed)) + "/" +
                             std::to_string(checks.size()) + " closed-form checks" + (failed ? ", failed:" + names : "")};
}

// 4. Adding centers outside the data does not lower the optimum.
Outcome representer_consistency() {
    const auto start = Clock::now();
    const auto inner = MatrixKernel::diag_scaled(ScalarKernel::poly(1), {1.0, 1.0});
    const auto outer = ScalarKernel::gauss(0.5);
    const auto settings = ObjectiveSettings::regression(0.1, 0.1);
    double worst = -INFINITY;
    for (std::uint64_t k = 0; k < 5; ++k) {
        std::mt19937_64 rng(100 + k);
        const PointSet X = uniform_points(rng, 2, 8);
        const Vec y = normal_vector(rng, 8);
        PointSet centers(2, 12);
        centers << X, uniform_points(rng, 2, 4);
        BfgsConfig cfg;
        cfg.restarts = 16;
        cfg.seed = derive_seed(k, "init");
        const double base = fit_two_layer(TwoLayerProblem(X, y, inner, outer), settings, cfg).optimization.objective;
        const double aug = fit_two_layer(TwoLayerProblem(X, y, inner, outer, centers), settings, cfg).optimization.objective;
        worst = std::max(worst, (base - aug) / std::abs(base));
    }
    const double secs = seconds_since(start);
    return {worst <= 1e-3 && secs <= 300.0,
            "largest relative improvement from 4 extra centers " + fmt(worst) + " over 5 instances, " + fmt(secs) + " s"};
}

std::string ordering_summary(const ComparisonReport& r) {
    return "two-layer mean " + fmt(r.two_layer_errors.mean) + " / frac " + fmt(r.two_layer_errors.frac_above_10pct) +
           " vs single-layer mean " + fmt(r.single_layer_errors.mean) + " / frac " +
           fmt(r.single_layer_errors.frac_above_10pct);
}

// 5. Interpolation of h1: two-layer beats the single-layer baseline.
Outcome interpolation_ordering() {
    std::string detail;
    bool ok = true;
    for (auto scale : {DemoScale::Desk, DemoScale::Paper}) {
        const auto start = Clock::now();
        const auto res = run_demo(DemoFigure::IntH1, scale, 0);
        const double secs = seconds_since(start);
        const auto& r = res.reports.front();
        const bool pass = r.two_layer_errors.mean < r.single_layer_errors.mean &&
                          r.two_layer_errors.frac_above_10pct < r.single_layer_errors.frac_above_10pct &&
                          (scale == DemoScale::Paper || secs <= 600.0);
        ok = ok && pass;
        detail += (detail.empty() ? "" : "; ") + to_string(scale) + ": " + ordering_summary(r) + ", " + fmt(secs) + " s";
    }
    return {ok, detail};
}

// 6. Linear outer kernel (setting 1) against Matern outer (setting 2), both with the mixture inner kernel.
Outcome linear_outer_ordering() {
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto res = run_demo(DemoFigure::LinoutH1, DemoScale::Desk, seed);
        const double lin = res.reports[0].two_layer_errors.mean;
        const double mat = res.reports[1].two_layer_errors.mean;
        wins += mat < lin;
        detail += (seed ? ", " : "") + std::string("seed ") + std::to_string(seed) + ": " + fmt(mat) + " vs " + fmt(lin);
    }
    return {wins >= 4, std::to_string(wins) + "/5 seeds with setting 2 below setting 1 (" + detail + ")"};
}

// 7. Cost of one objective + gradient evaluation as N doubles.
Outcome cost_scaling() {
    const auto inner = MatrixKernel::diag_scaled(ScalarKernel::poly(1), {1.0, 1.0});
    const auto settings = ObjectiveSettings::regression(0.1, 0.1);
    std::vector<double> per_eval;
    for (Eigen::Index N : {25, 50, 100}) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(N));
        const TwoLayerProblem p(uniform_points(rng, 2, N), normal_vector(rng, N), inner, ScalarKernel::gauss(0.5));
        const Vec c = normal_vector(rng, p.num_coefficients(), 0.3);
        const int reps = static_cast<int>(400000 / (N * N));
        std::vector<double> batches;
        double sink = 0.0;
        for (int b = 0; b < 5; ++b) {
            const auto start = Clock::now();
            for (int i = 0; i < reps; ++i) sink += p.evaluate(c, settings, true).gradient[0];
            batches.push_back(seconds_since(start) / reps);
        }
        if (!std::isfinite(sink)) return {false, "non-finite gradient"};
        std::sort(batches.begin(), batches.end());
        per_eval.push_back(batches[2]);
    }
    const double r1 = per_eval[1] / per_eval[0], r2 = per_eval[2] / per_eval[1];
    return {r1 <= 10.0 && r2 <= 10.0, "per evaluation " + fmt(per_eval[0] * 1e3) + " / " + fmt(per_eval[1] * 1e3) + " / " +
                                         fmt(per_eval[2] * 1e3) + " ms at N = 25/50/100, ratios " + fmt(r1) + ", " +
                                         fmt(r2)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 8. Two runs of the demo command write byte-identical outputs.
Outcome demo_determinism() {
    const fs::path root = fs::temp_directory_path() / "deepkern_acceptance_determinism";
    fs::remove_all(root);
    std::vector<std::string> stdout_text;
    for (const char* run : {"a", "b"}) {
        fs::create_directories(root / run);
        const std::string cmd = std::string(DEEPKERN_CLI) + " --seed 11 demo --figure int-h1 --scale desk --out " +
                                (root / run).string() + " 2>/dev/null";
        FILE* pipe = popen(cmd.c_str(), "r");
        if (!pipe) return {false, "could not start the command"};
        std::string out;
        std::array<char, 4096> buf{};
        std::size_t n;
        while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
        const int status = pclose(pipe);
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "demo command failed"};
        stdout_text.push_back(out);
    }
    int files = 0, differing = 0;
    for (const auto& entry : fs::directory_iterator(root / "a")) {
        ++files;
        const auto other = root / "b" / entry.path().filename();
        differing += !fs::exists(other) || slurp(entry.path()) != slurp(other);
    }
    fs::remove_all(root);
    const bool same_stdout = stdout_text[0] == stdout_text[1];
    return {files >= 5 && differing == 0 && same_stdout,
            std::to_string(files) + " output files compared, " + std::to_string(differing) + " differ" +
                (same_stdout ? "" : ", stdout differs")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"multi-layer kernel identity", mlmkl_identity},
        {"closed-form oracles", closed_forms},
        {"representer consistency", representer_consistency},
        {"interpolation ordering on h1", interpolation_ordering},
        {"linear vs Matern outer ordering on h1", linear_outer_ordering},
        {"cost scaling", cost_scaling},
        {"demo determinism", demo_determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o{false, ""};
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.passed;
        std::cout << "criterion " << i + 1 << " " << (o.passed ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
                  << o.detail << std::endl;
    }
    std::cout << (failures ? "acceptance FAILED (" + std::to_string(failures) + " criteria)" : "acceptance PASSED")
              << std::endl;
    return failures ? 1 : 0;
}
