#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "spats/protocol.hpp"

using namespace spats;

namespace {

CommGraph formation_graph() {
    Matrix adjacency(3, 3);
    adjacency << 0, 0, 0, 1, 0, 0, 1, 0, 0;
    return build_graph(adjacency, (Vector(3) << 1, 1, 0).finished());
}

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Index>(xs.size()));
    Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no spats::Error thrown";
    return ErrorKind::InvalidParameter;
}

// Brute-force min over c of max_i |c lambda_i - 1| on a fine log grid.
double brute_force_min_cr0(const ComplexSpectrum& spectrum) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 200000; ++k) {
        const double c = std::exp(std::log(1e-2) + (std::log(1e2) - std::log(1e-2)) * k / 200000.0);
        double worst = 0.0;
        for (const auto& z : spectrum) worst = std::max(worst, std::abs(c * z - 1.0));
        best = std::min(best, worst);
    }
    return best;
}

SynchronizationGains identity_gains(double c) {
    SynchronizationGains k;
    k.kind = ModelKind::continuous;
    k.K_s = Matrix::Identity(2, 2);
    k.K_f = Matrix::Identity(2, 2);
    k.c = c;
    return k;
}

} // namespace

TEST(Graph, FormationMatrices) {
    const auto g = formation_graph();
    Matrix L(3, 3);
    L << 0, 0, 0, -1, 1, 0, -1, 0, 1;
    EXPECT_EQ(g.laplacian, L);
    EXPECT_EQ(g.degree, vec({0, 1, 1}));
    EXPECT_EQ(g.pinning_matrix(), Matrix(vec({1, 1, 0}).asDiagonal()));
    // Gamma = diag(1/2, 1/3, 1/2) (L + B)
    Matrix gamma(3, 3);
    gamma << 0.5, 0, 0, -1.0 / 3.0, 2.0 / 3.0, 0, -0.5, 0, 0.5;
    EXPECT_LE((g.gamma - gamma).norm(), 1e-16);
    const auto ev = sorted(eigvals(g.gamma));
    EXPECT_NEAR(ev[0].real(), 0.5, 1e-15);
    EXPECT_NEAR(ev[1].real(), 0.5, 1e-15);
    EXPECT_NEAR(ev[2].real(), 2.0 / 3.0, 1e-15);
}

TEST(Graph, SingleAgent) {
    const auto g = build_graph(Matrix::Zero(1, 1), vec({1}));
    EXPECT_EQ(g.laplacian(0, 0), 0.0);
    EXPECT_EQ(g.gamma(0, 0), 0.5);
}

TEST(Graph, Rejections) {
    Matrix adjacency(3, 3);
    adjacency << 0, 0, 0, 1, 0, 0, 0, 0, 0;
    EXPECT_EQ(kind_of([&] { build_graph(adjacency, vec({1, 0, 0})); }), ErrorKind::LeaderUnreachable);
    EXPECT_EQ(kind_of([&] { build_graph(Matrix::Zero(2, 2), vec({0, 0})); }), ErrorKind::LeaderUnreachable);
    Matrix negative = Matrix::Zero(2, 2);
    negative(1, 0) = -1;
    EXPECT_EQ(kind_of([&] { build_graph(negative, vec({1, 1})); }), ErrorKind::NegativeWeight);
    EXPECT_EQ(kind_of([&] { build_graph(Matrix::Zero(2, 2), vec({1, -1})); }), ErrorKind::NegativeWeight);
}

TEST(Graph, RandomLaplacianProperties) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Index n = 2 + trial % 6;
        Matrix adjacency = Matrix::Zero(n, n);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j)
                if (i != j && unit(rng) < 0.4) adjacency(i, j) = unit(rng) * 3.0;
        Vector pinning = Vector::Zero(n);
        for (Index i = 0; i < n; ++i) pinning(i) = unit(rng) < 0.5 ? 1.0 + unit(rng) : 0.0;
        pinning(0) = 1.0;
        // chain from agent 0 guarantees reachability
        for (Index i = 1; i < n; ++i) adjacency(i, i - 1) = std::max(adjacency(i, i - 1), 0.5);
        const auto g = build_graph(adjacency, pinning);
        for (Index i = 0; i < n; ++i) EXPECT_NEAR(g.laplacian.row(i).sum(), 0.0, 1e-14);
        for (const auto& z : eigvals(g.laplacian_plus_pinning())) EXPECT_GT(z.real(), 0.0);
        const double c = 0.2 + 3.0 * unit(rng);
        const double r0 = covering_radius(g, c);
        for (const auto& z : eigvals(g.gamma)) EXPECT_LE(std::abs(z - 1.0 / c), r0 + 1e-14);
    }
}

TEST(Coupling, ContinuousBound) {
    EXPECT_EQ(continuous_coupling_bound(formation_graph()), 0.5);
    EXPECT_EQ(continuous_coupling_bound(build_graph(Matrix::Zero(3, 3), vec({1, 1, 1}))), 0.5);
    EXPECT_EQ(continuous_coupling_bound(build_graph(Matrix::Zero(3, 3), vec({2, 2, 2}))), 0.25);
}

TEST(Coupling, CoveringRadius) {
    const auto g = formation_graph();
    EXPECT_NEAR(covering_radius(g, 12.0 / 7.0), 1.0 / 12.0, 1e-15);
    EXPECT_NEAR(covering_radius(g, 1.0), 0.5, 1e-15);
    EXPECT_NEAR(covering_radius(build_graph(Matrix::Zero(2, 2), vec({1, 1})), 2.0), 0.0, 1e-15);
    EXPECT_THROW(covering_radius(g, 0.0), Error);
}

TEST(Coupling, SelectionMatchesBruteForce) {
    const auto g = formation_graph();
    const double c = select_discrete_coupling(g, 0.9981);
    EXPECT_NEAR(c, 12.0 / 7.0, 1e-6);
    EXPECT_NEAR(c * covering_radius(g, c), 1.0 / 7.0, 1e-12);
    EXPECT_LE(c * covering_radius(g, c), brute_force_min_cr0(eigvals(g.gamma)) + 1e-15);
    EXPECT_TRUE(discrete_coupling_feasible(g, 12.0 / 7.0, 0.9981));
    EXPECT_EQ(kind_of([&] { select_discrete_coupling(g, 1e-9); }), ErrorKind::Infeasible);
}

TEST(Coupling, PointSpectrumIsAlwaysFeasible) {
    const auto g = build_graph(Matrix::Zero(2, 2), vec({1, 1}));
    const double c = select_discrete_coupling(g, 1e-6);
    EXPECT_NEAR(c, 2.0, 1e-6);
}

TEST(Gains, ContinuousTrivialCare) {
    const auto gr = lqr_gain_continuous(Matrix::Zero(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                                        Matrix::Identity(2, 2));
    EXPECT_LE((gr.P - Matrix::Identity(2, 2)).norm(), 1e-12);
    EXPECT_LE((gr.K - Matrix::Identity(2, 2)).norm(), 1e-12);
}

TEST(Gains, DiscreteDeadbeatWithIdentityInput) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal;
    Matrix A(3, 3);
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) A(i, j) = normal(rng);
    const auto gr = gain_discrete(A, Matrix::Identity(3, 3), Matrix::Identity(3, 3));
    EXPECT_LE((gr.P - Matrix::Identity(3, 3)).norm(), 1e-12);
    EXPECT_LE((gr.K - A).norm(), 1e-12);
}

TEST(Gains, StabilityRadiusOracle) {
    // B square: W = A'A, so r = sigma_max(A)^{-1}
    Matrix A(2, 2);
    A << 0.5, 0.2, -0.1, 0.3;
    const auto gr = gain_discrete(A, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
    const double r = stability_radius_discrete(A, Matrix::Identity(2, 2), gr.P, Matrix::Identity(2, 2));
    EXPECT_NEAR(r, 1.0 / sigma_max(A), 1e-12);
    EXPECT_TRUE(std::isinf(stability_radius_discrete(Matrix::Zero(2, 2), Matrix::Identity(2, 2),
                                                     Matrix::Identity(2, 2), Matrix::Identity(2, 2))));
}

TEST(NeighborhoodError, HandSums) {
    const auto g = formation_graph();
    const std::vector<Vector> xs{vec({1, 0}), vec({5, 5}), vec({0, 0})};
    EXPECT_EQ(neighborhood_error(g, xs, vec({9, 9}), 2), vec({1, 0}));
    const std::vector<Vector> ys{vec({1, 1}), vec({0, 0}), vec({0, 0})};
    EXPECT_EQ(neighborhood_error(g, ys, vec({2, 2}), 0), vec({1, 1}));
    const std::vector<Vector> same(3, vec({3, -1}));
    EXPECT_EQ(neighborhood_error(g, same, vec({3, -1}), 1), vec({0, 0}));
    EXPECT_THROW(neighborhood_error(g, same, vec({3}), 1), Error);
    EXPECT_THROW(neighborhood_error(g, same, vec({3, -1}), 3), Error);
}

TEST(Control, ContinuousIdentityGains) {
    const auto k = identity_gains(0.5);
    EXPECT_EQ(control_continuous(k, vec({1, 0}), vec({0, 2})), vec({0.5, 1}));
    EXPECT_EQ(control_continuous(k, vec({0, 0}), vec({0, 0})), vec({0, 0}));
    EXPECT_THROW(control_continuous(k, vec({1}), vec({0, 2})), Error);
}

TEST(Control, DiscretePrefactors) {
    const auto g = formation_graph();
    auto k = identity_gains(1.0);
    k.kind = ModelKind::discrete;
    k.c_s = 1.0;
    k.c_f = 1.0;
    const Vector e = vec({1, 0}), z = vec({0, 0});
    EXPECT_NEAR(control_discrete(k, g, 1, e, z)(0), 1.0 / 3.0, 1e-16);
    EXPECT_NEAR(control_discrete(k, g, 2, e, z)(0), 1.0 / 2.0, 1e-16);
    EXPECT_EQ(control_discrete(k, g, 0, z, z), z);
    EXPECT_THROW(control_continuous(k, e, z), Error);
}

TEST(Control, LinearInErrors) {
    std::mt19937_64 rng(55);
    std::normal_distribution<double> normal;
    const auto g = formation_graph();
    auto k = identity_gains(0.7);
    k.K_s << 1.5, -2, 0.25, 3;
    k.K_f << -0.5, 4, 1, 1;
    auto kd = k;
    kd.kind = ModelKind::discrete;
    kd.c_s = 1.3;
    kd.c_f = 0.4;
    for (int trial = 0; trial < 50; ++trial) {
        const Vector es = vec({normal(rng), normal(rng)}), ef = vec({normal(rng), normal(rng)});
        const double alpha = normal(rng) * 10.0;
        const Vector u = control_continuous(k, es, ef);
        EXPECT_LE((control_continuous(k, alpha * es, alpha * ef) - alpha * u).norm(), 1e-12 * (1 + std::abs(alpha)) * (1 + u.norm()));
        const Vector ud = control_discrete(kd, g, trial % 3, es, ef);
        EXPECT_LE((control_discrete(kd, g, trial % 3, alpha * es, alpha * ef) - alpha * ud).norm(),
                  1e-12 * (1 + std::abs(alpha)) * (1 + ud.norm()));
    }
}

TEST(Certificates, ContinuousAndDiscreteShapes) {
    // scalar subsystems: a - c lambda b k
    ChangDecomposition d;
    d.kind = ModelKind::continuous;
    d.A_s = Matrix::Constant(1, 1, 1.0);
    d.B_s = Matrix::Constant(1, 1, 1.0);
    d.A_f = Matrix::Constant(1, 1, -1.0);
    d.B_f = Matrix::Constant(1, 1, 1.0);
    SynchronizationGains k;
    k.kind = ModelKind::continuous;
    k.K_s = Matrix::Constant(1, 1, 3.0);
    k.K_f = Matrix::Constant(1, 1, 0.0);
    k.c = 0.5;
    const auto certs = subsystem_certificates(d, formation_graph(), k);
    ASSERT_EQ(certs.size(), 6u);
    for (const auto& cert : certs) {
        const double expected = cert.subsystem == 's' ? 1.0 - 1.5 * cert.lambda.real() : -1.0;
        EXPECT_NEAR(cert.margin, expected, 1e-14);
        EXPECT_EQ(cert.ok, expected < 0.0);
    }
}
