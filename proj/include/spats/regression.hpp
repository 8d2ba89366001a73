#pragma once

// Reference regression for the bundled aircraft formation example: the
// published matrices, gains and radii plus the synchronization and
// invariant checks. Shared by `spats verify-paper` and the acceptance test.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "spats/io.hpp"
#include "spats/pipeline.hpp"

namespace spats::regression {

namespace fs = std::filesystem;

/// Published four-decimal values for the aircraft example.
namespace published {

inline Matrix mat2(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m << a, b, c, d;
    return m;
}

inline const Matrix continuous_M = mat2(0.0992, -0.0334, -2.2051, -0.0356);
inline const Matrix continuous_N = mat2(0.0221, 0.0190, 0.9225, -0.1621);
inline const Matrix continuous_A_f = mat2(-0.8401, 0.9989, -4.7974, -0.4912);
inline const Matrix continuous_B_f = mat2(-0.1101, 6.9565e-5, -8.6980, -0.0016);
inline const Matrix continuous_A_s_row0 = (Matrix(1, 2) << -0.0149, -0.0805).finished();
inline const Matrix continuous_B_s = mat2(0.1666, 0.0008, -1.3085, -0.0003);
inline const Matrix continuous_K_f = mat2(-15.0567, -31.4258, 0.0410, -0.0063);
inline const Matrix continuous_K_s = mat2(28.8604, -28.2527, 7.2949, 0.9046);

inline const Matrix discrete_M = mat2(0.0938, -0.0334, -2.2051, -0.0356);
inline const Matrix discrete_N = mat2(0.0221, 0.0190, 0.9225, -0.1621);
inline const Matrix discrete_A_f = mat2(-0.3286, 0.1927, -0.9253, -0.2613);
inline const Matrix discrete_B_f = mat2(-1.8885, 0.0016, -3.2983, -0.0478);
inline const Matrix discrete_A_s = mat2(0.9823, -0.0799, 0.0729, 0.9982);
inline const Matrix discrete_K_f = mat2(0.1801, -0.0917, 6.9349, 11.8009);
inline const Matrix discrete_K_s = mat2(-0.0289, -0.3882, 44.5447, -1.9819);

inline constexpr double r_f = 1.001;
inline constexpr double r_s = 0.9981;
inline constexpr double continuous_coupling = 0.5;
inline constexpr double discrete_coupling = 12.0 / 7.0;

inline const Vector leader_init = (Vector(4) << 0.0, 1.0, 0.0, 0.5).finished();
inline const std::vector<Vector> continuous_follower_inits = {
    (Vector(4) << 0.0, -0.5, 0.0, 1.0).finished(),
    (Vector(4) << 0.0, 2.5, 0.0, 0.0).finished(),
    (Vector(4) << 0.0, 0.0, 0.0, 0.0).finished(),
};

} // namespace published

struct Fixtures {
    io::ModelDocument continuous;
    io::ModelDocument discrete;
    CommGraph graph;
};

inline Fixtures load_fixtures(const fs::path& dir) {
    Fixtures f;
    f.continuous = io::load_model(dir / "aircraft_continuous.json");
    f.discrete = io::load_model(dir / "aircraft_discrete.json");
    f.graph = io::load_graph(dir / "formation_graph.json");
    return f;
}

struct Options {
    /// Negative control: seed Newton away from the solution and forbid iterations.
    bool corrupt_newton_seed = false;
};

struct CriterionResult {
    int id = 0;
    std::string title;
    bool passed = false;
    std::vector<std::string> findings;  // failing checks first, then diagnostics
};

/// Collects named checks for one criterion.
class Checks {
public:
    void require(bool ok, const std::string& what) {
        if (!ok) {
            passed_ = false;
            failures_.push_back(what);
        }
    }

    void note(const std::string& what) { notes_.push_back(what); }

    /// Elementwise |computed - expected| <= tol.
    void close(const std::string& name, const Matrix& computed, const Matrix& expected, double tol) {
        if (computed.rows() != expected.rows() || computed.cols() != expected.cols()) {
            require(false, name + ": shape mismatch");
            return;
        }
        for (Index i = 0; i < computed.rows(); ++i) {
            for (Index j = 0; j < computed.cols(); ++j) {
                const double dev = std::abs(computed(i, j) - expected(i, j));
                if (!(dev <= tol)) {
                    require(false, name + "[" + std::to_string(i) + "," + std::to_string(j) +
                                       "] = " + fmt(computed(i, j)) + " vs " + fmt(expected(i, j)) +
                                       " (|dev| " + fmt(dev) + " > " + fmt(tol) + ")");
                }
            }
        }
    }

    /// Elementwise |computed - expected| <= tol * |expected|.
    void close_relative(const std::string& name, const Matrix& computed, const Matrix& expected, double tol) {
        for (Index i = 0; i < computed.rows(); ++i) {
            for (Index j = 0; j < computed.cols(); ++j) {
                const double rel = std::abs(computed(i, j) - expected(i, j)) / std::abs(expected(i, j));
                if (!(rel <= tol)) {
                    require(false, name + "[" + std::to_string(i) + "," + std::to_string(j) +
                                       "] = " + fmt(computed(i, j)) + " vs " + fmt(expected(i, j)) +
                                       " (rel " + fmt(rel) + " > " + fmt(tol) + ")");
                }
            }
        }
    }

    void scalar(const std::string& name, double computed, double expected, double tol) {
        const double dev = std::abs(computed - expected);
        require(dev <= tol, name + " = " + fmt(computed) + " vs " + fmt(expected) + " (|dev| " + fmt(dev) +
                                " > " + fmt(tol) + ")");
    }

    CriterionResult finish(int id, std::string title) {
        CriterionResult r{id, std::move(title), passed_, failures_};
        r.findings.insert(r.findings.end(), notes_.begin(), notes_.end());
        return r;
    }

    static std::string fmt(double x) {
        std::ostringstream ss;
        ss.precision(6);
        ss << x;
        return ss.str();
    }

private:
    bool passed_ = true;
    std::vector<std::string> failures_;
    std::vector<std::string> notes_;
};

namespace detail {

inline NewtonOptions newton_options(const PartitionedLinearModel& model, const Options& opts) {
    NewtonOptions n;
    n.tol = kDefaultNewtonTolerance;
    if (opts.corrupt_newton_seed) {
        n.seed = solve_linear(model.fast_block(), model.A3) + Matrix::Constant(model.n2(), model.n1(), 0.1);
        n.max_iterations = 0;
    }
    return n;
}

inline CriterionResult guarded(int id, const std::string& title, const std::function<CriterionResult()>& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        return {id, title, false, {std::string("exception: ") + e.what()}};
    }
}

inline Scenario continuous_reference_scenario(const Fixtures& f, std::vector<Vector> followers, double horizon,
                                              std::optional<double> step) {
    const auto& mdl = f.continuous.model;
    return build_scenario(mdl, f.graph, SubsystemWeights::defaults(mdl.n1(), mdl.n2(), mdl.m()),
                          io::CouplingSpec::single(published::continuous_coupling), published::leader_init,
                          std::move(followers), horizon, step);
}

inline Scenario discrete_reference_scenario(const Fixtures& f, std::vector<Vector> followers, double steps) {
    const auto& mdl = f.discrete.model;
    return build_scenario(mdl, f.graph, SubsystemWeights::defaults(mdl.n1(), mdl.n2(), mdl.m()),
                          io::CouplingSpec::single(published::discrete_coupling), published::leader_init,
                          std::move(followers), steps, std::nullopt);
}

inline std::vector<Vector> copies(const Vector& x, std::size_t n) { return std::vector<Vector>(n, x); }

inline std::vector<Vector> theta_perturbed(std::size_t n) {
    Vector x = published::leader_init;
    x(1) += 0.1;
    return copies(x, n);
}

inline double max_error(const TrajectoryLog& log) {
    double worst = 0.0;
    for (const auto& series : log.error_norms) {
        for (double e : series) {
            worst = std::max(worst, e);
        }
    }
    return worst;
}

} // namespace detail

inline CriterionResult continuous_decomposition(const Fixtures& f, const Options& opts) {
    const auto& mdl = f.continuous.model;
    const auto d = decompose(mdl, detail::newton_options(mdl, opts));
    Checks c;
    c.close("M", d.M, published::continuous_M, 5e-4);
    c.close("N", d.N, published::continuous_N, 5e-4);
    c.close("A_f", d.A_f, published::continuous_A_f, 5e-4);
    c.close("B_f", d.B_f, published::continuous_B_f, 5e-4);
    c.close("A_s row 0", d.A_s.topRows(1), published::continuous_A_s_row0, 5e-4);
    c.close("A_s vs A1 - A2 M", d.A_s, mdl.A1 - mdl.A2 * d.M, 1e-10);
    c.close("B_s", d.B_s, published::continuous_B_s, 5e-4);
    c.note("residual_M " + Checks::fmt(d.residual_M) + ", Newton iterations " + std::to_string(d.newton_iterations));
    return c.finish(1, "continuous decomposition regression");
}

inline CriterionResult discrete_decomposition(const Fixtures& f, const Options& opts) {
    const auto& mdl = f.discrete.model;
    const auto d = decompose(mdl, detail::newton_options(mdl, opts));
    Checks c;
    c.close("M", d.M, published::discrete_M, 5e-4);
    c.close("N", d.N, published::discrete_N, 5e-4);
    c.close("A_f", d.A_f, published::discrete_A_f, 5e-4);
    c.close("A_s", d.A_s, published::discrete_A_s, 5e-4);
    c.close("B_f", d.B_f, published::discrete_B_f, 7e-3);
    c.close("B_s vs B1 - eps N B_f", d.B_s, mdl.B1 - mdl.epsilon * d.N * d.B_f, 1e-10);
    return c.finish(2, "discrete decomposition regression");
}

inline CriterionResult spectrum_conservation(const Fixtures& f) {
    Checks c;
    for (const auto* doc : {&f.continuous, &f.discrete}) {
        const auto d = decompose(doc->model, NewtonOptions{kDefaultNewtonTolerance, kDefaultNewtonIterations, std::nullopt});
        const auto report = verify_decomposition(doc->model, d);
        c.require(report.max_eigen_gap <= 1e-6,
                  doc->name + ": matched eigenvalue gap " + Checks::fmt(report.max_eigen_gap) + " > 1e-6");
        c.note(doc->name + ": gap " + Checks::fmt(report.max_eigen_gap));
    }
    return c.finish(3, "spectrum conservation");
}

inline CriterionResult gain_regression(const Fixtures& f) {
    Checks c;
    const auto& cm = f.continuous.model;
    const auto cd = decompose(cm, NewtonOptions{kDefaultNewtonTolerance, kDefaultNewtonIterations, std::nullopt});
    const auto w = SubsystemWeights::defaults(cm.n1(), cm.n2(), cm.m());
    c.close_relative("continuous K_f", lqr_gain_continuous(cd.A_f, cd.B_f, w.Q_f, w.R_f).K,
                     published::continuous_K_f, 1e-2);
    c.close_relative("continuous K_s", lqr_gain_continuous(cd.A_s, cd.B_s, w.Q_s, w.R_s).K,
                     published::continuous_K_s, 1e-2);
    const auto dd = decompose(f.discrete.model, NewtonOptions{kDefaultNewtonTolerance, kDefaultNewtonIterations, std::nullopt});
    c.close_relative("discrete K_f", gain_discrete(dd.A_f, dd.B_f, w.Q_f).K, published::discrete_K_f, 1e-2);
    c.close_relative("discrete K_s", gain_discrete(dd.A_s, dd.B_s, w.Q_s).K, published::discrete_K_s, 1e-2);
    return c.finish(4, "gain regression");
}

inline CriterionResult graph_and_coupling(const Fixtures& f) {
    Checks c;
    const auto& g = f.graph;
    const double lb_gap = matched_spectrum_distance(eigvals(g.laplacian_plus_pinning()), {1.0, 1.0, 2.0});
    c.require(lb_gap <= 1e-12, "eig(L+B) deviates from {1,1,2} by " + Checks::fmt(lb_gap));
    const double c_min = continuous_coupling_bound(g);
    c.require(c_min == 0.5, "c_min = " + Checks::fmt(c_min) + " is not exactly 0.5");
    const double gamma_gap = matched_spectrum_distance(eigvals(g.gamma), {0.5, 0.5, 2.0 / 3.0});
    c.require(gamma_gap <= 1e-12, "eig(Gamma) deviates from {1/2,1/2,2/3} by " + Checks::fmt(gamma_gap));

    const auto d = decompose(f.discrete.model, NewtonOptions{kDefaultNewtonTolerance, kDefaultNewtonIterations, std::nullopt});
    const auto gains = synthesize_discrete(d, g, SubsystemWeights::defaults(2, 2, 2), published::discrete_coupling,
                                           published::discrete_coupling);
    c.scalar("r_f", gains.r_f, published::r_f, 1e-3);
    c.scalar("r_s", gains.r_s, published::r_s, 1e-3);
    const double r0 = covering_radius(g, published::discrete_coupling);
    c.scalar("r0(12/7)", r0, 1.0 / 12.0, 1e-12);
    const double product = published::discrete_coupling * r0;
    c.require(product < std::min(gains.r_s, gains.r_f),
              "c r0 = " + Checks::fmt(product) + " not below min(r_s, r_f)");
    c.note("r_f " + Checks::fmt(gains.r_f) + ", r_s " + Checks::fmt(gains.r_s) + ", c r0 " + Checks::fmt(product));
    return c.finish(5, "graph and coupling regression");
}

inline CriterionResult continuous_synchronization(const Fixtures& f) {
    Checks c;
    const auto s = detail::continuous_reference_scenario(f, published::continuous_follower_inits, 60.0, 0.01);
    const auto margin = composite_error_margin(s.decomp, s.model, s.graph, s.gains);
    c.note("slowest composite tracking-error mode has real part " + Checks::fmt(margin));
    try {
        const auto log = simulate_continuous(s);
        for (std::size_t a = 0; a < log.agents(); ++a) {
            const auto& e = log.error_norms[a];
            const double peak = *std::max_element(e.begin(), e.end());
            const std::string who = "agent " + std::to_string(a + 1);
            c.require(e.back() <= 1e-2, who + ": final error " + Checks::fmt(e.back()) + " > 1e-2");
            c.require(e.back() < 1e-2 * peak,
                      who + ": final error is " + Checks::fmt(e.back() / peak) + " of peak (needs < 0.01)");
        }
    } catch (const Error& e) {
        c.require(false, std::string("step 0.01: ") + e.what());
        // Same scenario at the stability-limited default step, for diagnosis only.
        auto fallback = s;
        fallback.step.reset();
        const auto log = simulate_continuous(fallback);
        std::vector<double> finals;
        for (const auto& series : log.error_norms) {
            finals.push_back(series.back());
        }
        c.note("default step " + Checks::fmt(default_step(fallback)) + " gives final errors " +
               Checks::fmt(finals[0]) + ", " + Checks::fmt(finals[1]) + ", " + Checks::fmt(finals[2]));
    }
    return c.finish(6, "continuous synchronization");
}

inline CriterionResult discrete_synchronization(const Fixtures& f) {
    Checks c;
    const auto s = detail::discrete_reference_scenario(f, detail::theta_perturbed(3), 100);
    const auto log = simulate_discrete(s);
    const auto metrics = compute_metrics(log, 1e-3);
    for (std::size_t a = 0; a < metrics.final_error.size(); ++a) {
        c.require(metrics.settling_index[a].has_value(), "agent " + std::to_string(a + 1) + ": error " +
                                                             Checks::fmt(metrics.final_error[a]) +
                                                             " at step 100 (needs <= 1e-3)");
    }
    for (const auto& cert : subsystem_certificates(s.decomp, s.graph, s.gains)) {
        c.require(cert.ok, std::string("certificate ") + cert.subsystem + " at lambda " +
                               Checks::fmt(cert.lambda.real()) + ": spectral radius " + Checks::fmt(cert.margin));
    }
    c.note("composite tracking-error spectral radius " +
           Checks::fmt(composite_error_margin(s.decomp, s.model, s.graph, s.gains)));
    return c.finish(7, "discrete synchronization");
}

inline CriterionResult invariants(const Fixtures& f, const fs::path& scratch_dir) {
    Checks c;
    const auto leader = published::leader_init;
    const double scale = 1.0 + leader.cwiseAbs().maxCoeff();

    // manifold invariance
    {
        const auto sc = detail::continuous_reference_scenario(f, detail::copies(leader, 3), 60.0, std::nullopt);
        const double ec = detail::max_error(simulate_continuous(sc));
        c.require(ec <= 1e-12 * scale, "continuous manifold drift " + Checks::fmt(ec));
        const auto sd = detail::discrete_reference_scenario(f, detail::copies(leader, 3), 100);
        const double ed = detail::max_error(simulate_discrete(sd));
        c.require(ed <= 1e-12 * scale, "discrete manifold drift " + Checks::fmt(ed));
    }

    // linearity under scaling of every initial state
    {
        constexpr double alpha = -2.5;
        const auto scaled = [&](std::vector<Vector> xs) {
            for (auto& x : xs) {
                x *= alpha;
            }
            return xs;
        };
        const auto compare = [&](const Scenario& base, const std::string& tag) {
            Scenario other = base;
            other.leader_init *= alpha;
            other.follower_inits = scaled(base.follower_inits);
            const auto a = simulate(base);
            const auto b = simulate(other);
            double ref = 0.0;
            double worst = 0.0;
            const auto visit = [&](const Vector& x, const Vector& y) {
                ref = std::max(ref, std::abs(alpha) * x.cwiseAbs().maxCoeff());
                worst = std::max(worst, (alpha * x - y).cwiseAbs().maxCoeff());
            };
            for (std::size_t k = 0; k < a.samples(); ++k) {
                visit(a.leader_states[k], b.leader_states[k]);
                for (std::size_t i = 0; i < a.agents(); ++i) {
                    visit(a.follower_states[i][k], b.follower_states[i][k]);
                    visit(a.controls[i][k], b.controls[i][k]);
                }
            }
            c.require(worst <= 1e-10 * ref, tag + " linearity defect " + Checks::fmt(worst / ref));
        };
        compare(detail::continuous_reference_scenario(f, published::continuous_follower_inits, 10.0, std::nullopt),
                "continuous");
        compare(detail::discrete_reference_scenario(f, detail::theta_perturbed(3), 100), "discrete");
    }

    // RK4 order on the aircraft loop
    {
        const auto terminal = [&](double h) {
            const auto log =
                simulate_continuous(detail::continuous_reference_scenario(f, published::continuous_follower_inits, 1.0, h));
            Vector x(4 * 4);
            x << log.leader_states.back(), log.follower_states[0].back(), log.follower_states[1].back(),
                log.follower_states[2].back();
            return x;
        };
        constexpr double h = 0.005;
        const Vector a = terminal(h);
        const Vector b = terminal(h / 2);
        const Vector d = terminal(h / 4);
        const double ratio = (a - b).norm() / (b - d).norm();
        c.require(ratio >= 12.0 && ratio <= 20.0, "RK4 step-halving ratio " + Checks::fmt(ratio) + " outside [12, 20]");
        c.note("RK4 step-halving ratio " + Checks::fmt(ratio));
    }

    // Newton convergence
    for (const auto* doc : {&f.continuous, &f.discrete}) {
        const auto ms = solve_M(doc->model, NewtonOptions{1e-12, 20, std::nullopt});
        c.require(ms.residual <= 1e-12 && ms.iterations <= 20, doc->name + ": Newton needed " +
                                                                   std::to_string(ms.iterations) + " iterations");
    }

    // transform round trip
    {
        std::mt19937_64 rng(20240611);
        std::normal_distribution<double> normal;
        double worst = 0.0;
        for (const auto* doc : {&f.continuous, &f.discrete}) {
            const auto d = decompose(doc->model, NewtonOptions{kDefaultNewtonTolerance, kDefaultNewtonIterations, std::nullopt});
            for (int trial = 0; trial < 100; ++trial) {
                Vector x(4);
                for (Index i = 0; i < 4; ++i) {
                    x(i) = normal(rng);
                }
                const auto sf = transform_state(d, x);
                const Vector back = inverse_transform_states(d, sf.x_s, sf.x_f);
                worst = std::max(worst, (back - x).norm() / x.norm());
            }
        }
        c.require(worst <= 1e-12, "transform round trip error " + Checks::fmt(worst));
    }

    // determinism of the CSV output
    {
        const auto s = detail::continuous_reference_scenario(f, published::continuous_follower_inits, 10.0, std::nullopt);
        const std::string first = io::trajectory_csv(simulate_continuous(s));
        const std::string second = io::trajectory_csv(simulate_continuous(s));
        c.require(first == second, "two runs produced different CSV text");
        std::error_code ec;
        fs::create_directories(scratch_dir, ec);
        const auto p1 = scratch_dir / "determinism_a.csv";
        const auto p2 = scratch_dir / "determinism_b.csv";
        io::write_file_atomic(p1, first);
        io::write_file_atomic(p2, second);
        c.require(io::read_text_file(p1) == io::read_text_file(p2), "CSV files differ byte-wise");
        fs::remove(p1, ec);
        fs::remove(p2, ec);
    }
    return c.finish(8, "invariant suites");
}

inline std::vector<CriterionResult> run_all(const Fixtures& f, const Options& opts = {},
                                            const fs::path& scratch_dir = fs::temp_directory_path() / "spats") {
    std::vector<CriterionResult> out;
    out.push_back(detail::guarded(1, "continuous decomposition regression",
                                  [&] { return continuous_decomposition(f, opts); }));
    out.push_back(
        detail::guarded(2, "discrete decomposition regression", [&] { return discrete_decomposition(f, opts); }));
    out.push_back(detail::guarded(3, "spectrum conservation", [&] { return spectrum_conservation(f); }));
    out.push_back(detail::guarded(4, "gain regression", [&] { return gain_regression(f); }));
    out.push_back(detail::guarded(5, "graph and coupling regression", [&] { return graph_and_coupling(f); }));
    out.push_back(detail::guarded(6, "continuous synchronization", [&] { return continuous_synchronization(f); }));
    out.push_back(detail::guarded(7, "discrete synchronization", [&] { return discrete_synchronization(f); }));
    out.push_back(detail::guarded(8, "invariant suites", [&] { return invariants(f, scratch_dir); }));
    return out;
}

inline std::string format_row(const CriterionResult& r) {
    std::ostringstream ss;
    ss << (r.passed ? "PASS" : "FAIL") << "  C" << r.id << "  " << r.title;
    for (const auto& line : r.findings) {
        ss << "\n        " << line;
    }
    return ss.str();
}

} // namespace spats::regression
