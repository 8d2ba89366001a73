#include <gtest/gtest.h>

#include <cmath>

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "spats/pipeline.hpp"
#include "spats/sim.hpp"

using namespace spats;

namespace {

CommGraph formation_graph() {
    Matrix adjacency(3, 3);
    adjacency << 0, 0, 0, 1, 0, 0, 1, 0, 0;
    return build_graph(adjacency, (Vector(3) << 1, 1, 0).finished());
}

PartitionedLinearModel aircraft_discrete() {
    Matrix A(4, 4), B(4, 2);
    A << 0.9847, -0.0799, 9.054e-4, -1.076e-3, 0.04159, 0.9990, -0.03586, 0.01268, -0.5466, 0.04492, -0.3299,
        0.1932, 2.662, -0.1004, -0.9245, -0.2633;
    B << 0.002893, 7.361e-4, -0.08706, 9.341e-6, -1.984, -4.138e-4, -3.194, 9.254e-4;
    return partition_full_model(A, B, 2, 2, 1.0 / 30.0, ModelKind::discrete);
}

PartitionedLinearModel aircraft_continuous() {
    Matrix A(4, 4), B(4, 2);
    A << -0.015, -0.0805, -0.0011666, 0.0, 0.0, 0.0, 0.0, 0.03333, -2.28, 0.0, -0.84, 1.0, 0.6, 0.0, -4.8, -0.49;
    B << -9.16e-4, 7.416e-4, 0.0, 0.0, -0.11, 0.0, -8.7, 0.0;
    return partition_full_model(A, B, 2, 2, 1.0 / 30.0, ModelKind::continuous);
}

// Two-state plant with a slow unstable mode and a fast stable one.
PartitionedLinearModel toy_continuous() {
    Matrix A(2, 2), B(2, 1);
    A << 0.1, 1.0, 0.5, -8.0;
    B << 0.2, 1.0;
    return partition_full_model(A, B, 1, 1, 0.1, ModelKind::continuous);
}

Scenario make_scenario(const PartitionedLinearModel& model, const CommGraph& g, io::CouplingSpec coupling,
                       const Vector& leader, const std::vector<Vector>& followers, double horizon,
                       std::optional<double> step = std::nullopt) {
    return build_scenario(model, g, SubsystemWeights::defaults(model.n1(), model.n2(), model.m()), coupling, leader,
                          followers, horizon, step);
}

Vector stack_errors(const std::vector<Vector>& followers, const Vector& leader) {
    const Index n = leader.size();
    Vector d(n * static_cast<Index>(followers.size()));
    for (std::size_t i = 0; i < followers.size(); ++i) d.segment(static_cast<Index>(i) * n, n) = followers[i] - leader;
    return d;
}

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Index>(xs.size()));
    Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

} // namespace

TEST(Leader, DiscreteStepIsExact) {
    const auto model = aircraft_discrete();
    const Vector x = vec({0, 1, 0, 0.5});
    EXPECT_EQ(leader_step(model, x), full_matrices(model).A * x);
}

TEST(Leader, ContinuousStepMatchesExponential) {
    const auto model = aircraft_continuous();
    const Matrix A = full_matrices(model).A;
    const Vector x = vec({0, 1, 0, 0.5});
    const double h = 1e-3;
    const Vector exact = (A * h).exp() * x;
    EXPECT_LE((leader_step(model, x, h) - exact).norm(), 1e-10);
}

TEST(Simulate, DiscreteMatchesKroneckerIteration) {
    const auto model = aircraft_discrete();
    const auto g = formation_graph();
    const Vector leader = vec({0, 1, 0, 0.5});
    std::vector<Vector> followers{vec({0, 1.1, 0, 0.5}), vec({0.1, 0.9, 0, 0.4}), vec({0, 1.0, 0.2, 0.5})};
    const auto s = make_scenario(model, g, io::CouplingSpec::single(12.0 / 7.0), leader, followers, 50);
    const auto log = simulate(s);
    ASSERT_EQ(log.samples(), 51u);

    const auto full = full_matrices(model);
    const Matrix G = composite_gain(s.decomp, s.gains);
    const Matrix closed = Eigen::kroneckerProduct(Matrix::Identity(3, 3), full.A).eval() -
                          Eigen::kroneckerProduct(g.gamma, (full.B * G).eval()).eval();
    Vector delta = stack_errors(followers, leader);
    for (std::size_t k = 0; k < log.samples(); ++k) {
        const Vector logged = stack_errors({log.follower_states[0][k], log.follower_states[1][k],
                                            log.follower_states[2][k]},
                                           log.leader_states[k]);
        EXPECT_LE((logged - delta).cwiseAbs().maxCoeff(), 1e-12) << "step " << k;
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_EQ(log.error_norms[i][k], (log.follower_states[i][k] - log.leader_states[k]).cwiseAbs().maxCoeff());
        }
        delta = closed * delta;
    }
}

TEST(Simulate, DiscreteSingleAgentScalarByHand) {
    // x(k+1) = a x + b u, u = (1 + 0 + 1)^{-1} c k (x0 - x)
    Matrix A(2, 2), B(2, 1);
    A << 0.9, 0.05, 0.1, 0.3;
    B << 0.05, 1.0;
    const auto model = partition_full_model(A, B, 1, 1, 0.1, ModelKind::discrete);
    const auto g = build_graph(Matrix::Zero(1, 1), vec({1}));
    const auto s = make_scenario(model, g, io::CouplingSpec::single(1.5), vec({1, 0}), {vec({0, 0})}, 20);
    const auto log = simulate(s);
    const Matrix G = composite_gain(s.decomp, s.gains);
    Vector leader = vec({1, 0}), x = vec({0, 0});
    for (std::size_t k = 0; k < log.samples(); ++k) {
        EXPECT_LE((log.follower_states[0][k] - x).norm(), 1e-13);
        const Vector u = G * (leader - x) / 2.0;
        EXPECT_LE((log.controls[0][k] - u).norm(), 1e-13);
        x = A * x + B * u;
        leader = A * leader;
    }
}

TEST(Simulate, ContinuousMatchesKroneckerExponential) {
    const auto model = toy_continuous();
    const auto g = formation_graph();
    const Vector leader = vec({1, 0});
    std::vector<Vector> followers{vec({0, 0}), vec({2, 1}), vec({-1, 0.5})};
    const auto s = make_scenario(model, g, io::CouplingSpec::single(0.5), leader, followers, 2.0, 1e-3);
    const auto log = simulate(s);
    const auto full = full_matrices(model);
    const Matrix G = composite_gain(s.decomp, s.gains);
    const Matrix closed = Eigen::kroneckerProduct(Matrix::Identity(3, 3), full.A).eval() -
                          Eigen::kroneckerProduct(g.laplacian_plus_pinning(), (full.B * G).eval()).eval();
    const Vector expected = (closed * 2.0).exp() * stack_errors(followers, leader);
    const auto last = log.samples() - 1;
    const Vector logged = stack_errors({log.follower_states[0][last], log.follower_states[1][last],
                                        log.follower_states[2][last]},
                                       log.leader_states[last]);
    EXPECT_NEAR(log.times[last], 2.0, 1e-12);
    EXPECT_LE((logged - expected).cwiseAbs().maxCoeff(), 1e-8 * (1.0 + expected.norm()));
}

TEST(Simulate, ManifoldInvariance) {
    const Vector leader = vec({0, 1, 0, 0.5});
    for (const auto& model : {aircraft_continuous(), aircraft_discrete()}) {
        const auto coupling = model.kind == ModelKind::continuous ? io::CouplingSpec::single(0.5)
                                                                  : io::CouplingSpec::single(12.0 / 7.0);
        const double horizon = model.kind == ModelKind::continuous ? 5.0 : 100.0;
        const auto s = make_scenario(model, formation_graph(), coupling, leader, {leader, leader, leader}, horizon);
        const auto log = simulate(s);
        for (std::size_t i = 0; i < log.agents(); ++i) {
            for (std::size_t k = 0; k < log.samples(); ++k) {
                EXPECT_LE(log.error_norms[i][k], 1e-12 * (1.0 + log.leader_states[k].norm()));
                EXPECT_LE(log.controls[i][k].norm(), 1e-12);
            }
        }
    }
}

TEST(Simulate, LinearityAndDeterminism) {
    const auto model = toy_continuous();
    const double alpha = -3.0;
    const Vector leader = vec({1, 0});
    const std::vector<Vector> followers{vec({0, 0}), vec({2, 1}), vec({-1, 0.5})};
    const auto s1 = make_scenario(model, formation_graph(), io::CouplingSpec::single(0.5), leader, followers, 3.0);
    std::vector<Vector> scaled;
    for (const auto& f : followers) scaled.push_back(alpha * f);
    const auto s2 =
        make_scenario(model, formation_graph(), io::CouplingSpec::single(0.5), alpha * leader, scaled, 3.0);
    const auto a = simulate(s1), b = simulate(s2), c = simulate(s1);
    for (std::size_t k = 0; k < a.samples(); ++k) {
        const double ref = 1.0 + std::abs(alpha) * a.leader_states[k].cwiseAbs().maxCoeff();
        EXPECT_LE((alpha * a.leader_states[k] - b.leader_states[k]).cwiseAbs().maxCoeff(), 1e-10 * ref);
        for (std::size_t i = 0; i < a.agents(); ++i) {
            EXPECT_LE((alpha * a.follower_states[i][k] - b.follower_states[i][k]).cwiseAbs().maxCoeff(), 1e-10 * ref);
            EXPECT_LE((alpha * a.controls[i][k] - b.controls[i][k]).cwiseAbs().maxCoeff(),
                      1e-10 * (1.0 + std::abs(alpha) * a.controls[i][k].cwiseAbs().maxCoeff()));
            EXPECT_EQ(a.follower_states[i][k], c.follower_states[i][k]);
        }
    }
}

TEST(Simulate, Rk4FourthOrder) {
    const auto model = toy_continuous();
    const auto g = build_graph(Matrix::Zero(1, 1), vec({1}));
    const auto terminal = [&](double h) {
        const auto s = make_scenario(model, g, io::CouplingSpec::single(0.5), vec({1, 0}), {vec({0, 0})}, 1.0, h);
        return simulate(s).follower_states[0].back();
    };
    const Vector coarse = terminal(0.02), fine = terminal(0.01), finest = terminal(0.005);
    const double ratio = (coarse - fine).norm() / (fine - finest).norm();
    EXPECT_GE(ratio, 12.0);
    EXPECT_LE(ratio, 20.0);
}

TEST(Simulate, OversizedStepDetected) {
    const auto model = aircraft_continuous();
    const Vector leader = vec({0, 1, 0, 0.5});
    const auto s = make_scenario(model, formation_graph(), io::CouplingSpec::single(0.5), leader,
                                 {vec({0, -0.5, 0, 1}), vec({0, 2.5, 0, 0}), vec({0, 0, 0, 0})}, 60.0, 0.05);
    try {
        simulate(s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::StepTooLarge);
    }
    EXPECT_LE(default_step(s), 0.01);
}

TEST(Simulate, DiscreteDivergenceDetected) {
    Matrix A(2, 2), B(2, 1);
    A << 3.0, 0.0, 0.0, 0.2;
    B << 1.0, 1.0;
    const auto model = partition_full_model(A, B, 1, 1, 0.5, ModelKind::discrete);
    const auto g = build_graph(Matrix::Zero(1, 1), vec({1}));
    auto s = make_scenario(model, g, io::CouplingSpec::single(1.0), vec({1, 1}), {vec({0, 0})}, 100);
    try {
        simulate(s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Divergence);
    }
}

TEST(Simulate, ScenarioValidation) {
    const auto model = aircraft_discrete();
    const Vector leader = vec({0, 1, 0, 0.5});
    auto s = make_scenario(model, formation_graph(), io::CouplingSpec::single(1.0), leader, {leader, leader, leader}, 5);
    auto missing = s;
    missing.follower_inits.pop_back();
    EXPECT_THROW(simulate(missing), Error);
    auto short_state = s;
    short_state.leader_init = vec({1, 2});
    EXPECT_THROW(simulate(short_state), Error);
    auto no_horizon = s;
    no_horizon.horizon = 0.0;
    EXPECT_THROW(simulate(no_horizon), Error);
    EXPECT_THROW(simulate_continuous(s), Error);
}

TEST(Metrics, InverseSequenceSettlesAt101) {
    TrajectoryLog log;
    log.error_norms.resize(1);
    for (int k = 0; k <= 300; ++k) {
        log.times.push_back(k);
        log.error_norms[0].push_back(k == 0 ? 1.0 : 1.0 / k);
    }
    const auto m = compute_metrics(log, 0.01);
    ASSERT_TRUE(m.settling_index[0].has_value());
    EXPECT_EQ(*m.settling_index[0], 101u);
    EXPECT_EQ(*m.settling_time[0], 101.0);
    EXPECT_TRUE(m.synchronized);
}

TEST(Metrics, ZeroLogSettlesImmediatelyAndLateSpikeCounts) {
    TrajectoryLog log;
    log.error_norms.resize(2);
    for (int k = 0; k < 10; ++k) {
        log.times.push_back(0.5 * k);
        log.error_norms[0].push_back(0.0);
        log.error_norms[1].push_back(k == 9 ? 1.0 : 0.0);
    }
    const auto m = compute_metrics(log, 1e-3);
    EXPECT_EQ(*m.settling_index[0], 0u);
    EXPECT_FALSE(m.settling_index[1].has_value());
    EXPECT_FALSE(m.synchronized);
    EXPECT_THROW(compute_metrics(TrajectoryLog{}, 1e-3), Error);
}
