#pragma once

// Leader and follower propagation for both plant kinds.
//
// Continuous runs integrate the stacked (leader + followers) system with
// classical fixed-step RK4; the neighbourhood errors are rebuilt from the
// transformed states at every stage, so the stacked right-hand side is
// linear time-invariant. Discrete runs iterate the closed-loop difference
// equation directly.

#include <cmath>
#include <optional>
#include <vector>

#include "spats/decompose.hpp"
#include "spats/protocol.hpp"

namespace spats {

inline constexpr double kDivergenceLimit = 1e9;
inline constexpr double kDefaultContinuousStep = 0.01;
inline constexpr double kDefaultContinuousHorizon = 60.0;
inline constexpr int kDefaultDiscreteSteps = 100;

struct Scenario {
    PartitionedLinearModel model;
    ChangDecomposition decomp;
    CommGraph graph;
    SynchronizationGains gains;
    Vector leader_init;
    std::vector<Vector> follower_inits;
    /// Seconds (continuous) or number of steps (discrete).
    double horizon = 0.0;
    /// Continuous only; default_step() when empty.
    std::optional<double> step;
};

struct TrajectoryLog {
    ModelKind kind = ModelKind::continuous;
    Index n1 = 0, n2 = 0, m = 0;
    std::vector<double> times;
    std::vector<Vector> leader_states;
    std::vector<std::vector<Vector>> follower_states;  // [agent][sample]
    std::vector<std::vector<Vector>> controls;         // [agent][sample]
    std::vector<std::vector<double>> error_norms;      // [agent][sample], ||x_i - x_0||_inf

    std::size_t samples() const { return times.size(); }
    std::size_t agents() const { return follower_states.size(); }
};

struct ConvergenceMetrics {
    double threshold = 0.0;
    std::vector<double> final_error;
    std::vector<std::optional<std::size_t>> settling_index;
    std::vector<std::optional<double>> settling_time;
    bool synchronized = false;
};

/// One step of the autonomous leader: RK4 with step `dt` (continuous) or
/// x(k+1) = A x(k) (discrete, `dt` ignored).
inline Vector leader_step(const PartitionedLinearModel& model, const Vector& state, double dt = 0.0) {
    const Matrix A = full_matrices(model).A;
    if (state.size() != A.rows()) {
        throw Error(ErrorKind::DimensionMismatch, "leader state has wrong length");
    }
    if (model.kind == ModelKind::discrete) {
        return A * state;
    }
    const Vector k1 = A * state;
    const Vector k2 = A * (state + 0.5 * dt * k1);
    const Vector k3 = A * (state + 0.5 * dt * k2);
    const Vector k4 = A * (state + dt * k3);
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace detail {

inline void validate_scenario(const Scenario& s) {
    const Index n = s.model.n();
    if (s.follower_inits.empty()) {
        throw Error(ErrorKind::InvalidParameter, "scenario has no followers");
    }
    if (static_cast<Index>(s.follower_inits.size()) != s.graph.n_agents) {
        throw Error(ErrorKind::DimensionMismatch, "follower count differs from graph size");
    }
    if (s.leader_init.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "leader initial state has wrong length");
    }
    for (const auto& x : s.follower_inits) {
        if (x.size() != n) {
            throw Error(ErrorKind::DimensionMismatch, "follower initial state has wrong length");
        }
    }
    if (s.decomp.n1() != s.model.n1() || s.decomp.n2() != s.model.n2()) {
        throw Error(ErrorKind::DimensionMismatch, "decomposition does not match model");
    }
    if (s.gains.kind != s.model.kind || s.decomp.kind != s.model.kind) {
        throw Error(ErrorKind::InvalidParameter, "model, decomposition and gains disagree on kind");
    }
    if (!(s.horizon > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "horizon must be positive");
    }
}

// Evaluates every follower's control from the current stacked states.
inline std::vector<Vector> follower_controls(const Scenario& s, const Vector& leader,
                                             const std::vector<Vector>& followers) {
    const auto& d = s.decomp;
    const SlowFastState leader_sf = transform_state(d, leader);
    std::vector<Vector> xs, xf;
    xs.reserve(followers.size());
    xf.reserve(followers.size());
    for (const auto& x : followers) {
        auto sf = transform_state(d, x);
        xs.push_back(std::move(sf.x_s));
        xf.push_back(std::move(sf.x_f));
    }
    std::vector<Vector> u;
    u.reserve(followers.size());
    for (Index i = 0; i < s.graph.n_agents; ++i) {
        const Vector e_s = neighborhood_error(s.graph, xs, leader_sf.x_s, i);
        const Vector e_f = neighborhood_error(s.graph, xf, leader_sf.x_f, i);
        u.push_back(s.model.kind == ModelKind::continuous ? control_continuous(s.gains, e_s, e_f)
                                                          : control_discrete(s.gains, s.graph, i, e_s, e_f));
    }
    return u;
}

inline double inf_distance(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

inline void check_bounded(const Vector& x, ErrorKind kind) {
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kDivergenceLimit) {
        throw Error(kind, "state magnitude exceeded " + std::to_string(kDivergenceLimit));
    }
}

inline TrajectoryLog make_log(const Scenario& s, std::size_t samples) {
    TrajectoryLog log;
    log.kind = s.model.kind;
    log.n1 = s.model.n1();
    log.n2 = s.model.n2();
    log.m = s.model.m();
    const auto agents = static_cast<std::size_t>(s.graph.n_agents);
    log.times.reserve(samples);
    log.leader_states.reserve(samples);
    log.follower_states.assign(agents, {});
    log.controls.assign(agents, {});
    log.error_norms.assign(agents, {});
    for (std::size_t i = 0; i < agents; ++i) {
        log.follower_states[i].reserve(samples);
        log.controls[i].reserve(samples);
        log.error_norms[i].reserve(samples);
    }
    return log;
}

inline void record(TrajectoryLog& log, double t, const Vector& leader, const std::vector<Vector>& followers,
                   const std::vector<Vector>& u) {
    log.times.push_back(t);
    log.leader_states.push_back(leader);
    for (std::size_t i = 0; i < followers.size(); ++i) {
        log.follower_states[i].push_back(followers[i]);
        log.controls[i].push_back(u[i]);
        log.error_norms[i].push_back(inf_distance(followers[i], leader));
    }
}

} // namespace detail

/// Step bound 2.5 / rho over the plant and the composite tracking-error
/// modes, capped at kDefaultContinuousStep.
inline double default_step(const Scenario& s) {
    const auto full = full_matrices(s.model);
    const Matrix BG = full.B * composite_gain(s.decomp, s.gains);
    double rho = spectral_radius(full.A);
    for (const auto& lam : eigvals(s.graph.laplacian_plus_pinning())) {
        const ComplexMatrix Acl = full.A.cast<Complex>() - lam * BG.cast<Complex>();
        Eigen::ComplexEigenSolver<ComplexMatrix> es(Acl, false);
        rho = std::max(rho, es.eigenvalues().cwiseAbs().maxCoeff());
    }
    return rho > 0.0 ? std::min(kDefaultContinuousStep, 2.5 / rho) : kDefaultContinuousStep;
}

inline TrajectoryLog simulate_continuous(const Scenario& s) {
    detail::validate_scenario(s);
    if (s.model.kind != ModelKind::continuous) {
        throw Error(ErrorKind::InvalidParameter, "simulate_continuous needs a continuous scenario");
    }
    const double dt = s.step ? *s.step : default_step(s);
    if (!(dt > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "step must be positive");
    }
    const auto steps = static_cast<std::size_t>(std::llround(s.horizon / dt));
    const auto full = full_matrices(s.model);
    const auto agents = s.follower_inits.size();

    struct Stack {
        Vector leader;
        std::vector<Vector> followers;
    };
    const auto derivative = [&](const Stack& x) {
        Stack dx;
        dx.leader = full.A * x.leader;
        const auto u = detail::follower_controls(s, x.leader, x.followers);
        dx.followers.reserve(agents);
        for (std::size_t i = 0; i < agents; ++i) {
            dx.followers.push_back(full.A * x.followers[i] + full.B * u[i]);
        }
        return dx;
    };
    const auto axpy = [&](const Stack& x, double h, const Stack& k) {
        Stack out;
        out.leader = x.leader + h * k.leader;
        out.followers.reserve(agents);
        for (std::size_t i = 0; i < agents; ++i) {
            out.followers.push_back(x.followers[i] + h * k.followers[i]);
        }
        return out;
    };

    TrajectoryLog log = detail::make_log(s, steps + 1);
    Stack x{s.leader_init, s.follower_inits};
    for (std::size_t k = 0;; ++k) {
        detail::record(log, static_cast<double>(k) * dt, x.leader, x.followers,
                       detail::follower_controls(s, x.leader, x.followers));
        if (k == steps) {
            break;
        }
        const Stack k1 = derivative(x);
        const Stack k2 = derivative(axpy(x, 0.5 * dt, k1));
        const Stack k3 = derivative(axpy(x, 0.5 * dt, k2));
        const Stack k4 = derivative(axpy(x, dt, k3));
        x.leader += (dt / 6.0) * (k1.leader + 2.0 * k2.leader + 2.0 * k3.leader + k4.leader);
        detail::check_bounded(x.leader, ErrorKind::StepTooLarge);
        for (std::size_t i = 0; i < agents; ++i) {
            x.followers[i] +=
                (dt / 6.0) * (k1.followers[i] + 2.0 * k2.followers[i] + 2.0 * k3.followers[i] + k4.followers[i]);
            detail::check_bounded(x.followers[i], ErrorKind::StepTooLarge);
        }
    }
    return log;
}

inline TrajectoryLog simulate_discrete(const Scenario& s) {
    detail::validate_scenario(s);
    if (s.model.kind != ModelKind::discrete) {
        throw Error(ErrorKind::InvalidParameter, "simulate_discrete needs a discrete scenario");
    }
    const auto steps = static_cast<std::size_t>(std::llround(s.horizon));
    const auto full = full_matrices(s.model);
    const auto agents = s.follower_inits.size();

    TrajectoryLog log = detail::make_log(s, steps + 1);
    Vector leader = s.leader_init;
    std::vector<Vector> followers = s.follower_inits;
    for (std::size_t k = 0;; ++k) {
        const auto u = detail::follower_controls(s, leader, followers);
        detail::record(log, static_cast<double>(k), leader, followers, u);
        if (k == steps) {
            break;
        }
        leader = full.A * leader;
        detail::check_bounded(leader, ErrorKind::Divergence);
        for (std::size_t i = 0; i < agents; ++i) {
            followers[i] = full.A * followers[i] + full.B * u[i];
            detail::check_bounded(followers[i], ErrorKind::Divergence);
        }
    }
    return log;
}

inline TrajectoryLog simulate(const Scenario& s) {
    return s.model.kind == ModelKind::continuous ? simulate_continuous(s) : simulate_discrete(s);
}

inline ConvergenceMetrics compute_metrics(const TrajectoryLog& log, double threshold) {
    if (log.samples() == 0) {
        throw Error(ErrorKind::InvalidParameter, "empty trajectory log");
    }
    ConvergenceMetrics out;
    out.threshold = threshold;
    out.synchronized = true;
    for (const auto& errors : log.error_norms) {
        out.final_error.push_back(errors.back());
        // walk back to the last sample at or above threshold
        std::size_t first_settled = errors.size();
        while (first_settled > 0 && errors[first_settled - 1] < threshold) {
            --first_settled;
        }
        if (first_settled < errors.size()) {
            out.settling_index.emplace_back(first_settled);
            out.settling_time.emplace_back(log.times[first_settled]);
        } else {
            out.settling_index.emplace_back(std::nullopt);
            out.settling_time.emplace_back(std::nullopt);
            out.synchronized = false;
        }
    }
    return out;
}

} // namespace spats
