#pragma once

// Leader-follower graph algebra, per-subsystem gain synthesis and the local
// composite control laws.

#include <cmath>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spats/decompose.hpp"
#include "spats/matlib.hpp"

namespace spats {

/// Follower communication graph. Agent indices are zero-based; the leader
/// is not a node and reaches followers only through `pinning`.
struct CommGraph {
    Index n_agents = 0;
    Matrix adjacency;  ///< adjacency(i, j) > 0 when agent i senses agent j
    Vector pinning;    ///< pinning(i) > 0 when agent i senses the leader
    Matrix laplacian;
    Vector degree;
    Matrix gamma;      ///< (I + D + B)^{-1} (L + B)

    Matrix pinning_matrix() const { return pinning.asDiagonal(); }
    Matrix laplacian_plus_pinning() const { return laplacian + pinning_matrix(); }
    double normalizer(Index i) const { return 1.0 + degree(i) + pinning(i); }
};

namespace detail {

inline bool leader_reaches_all(const Matrix& adjacency, const Vector& pinning) {
    const Index n = adjacency.rows();
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    std::deque<Index> frontier;
    for (Index i = 0; i < n; ++i) {
        if (pinning(i) > 0.0) {
            seen[static_cast<std::size_t>(i)] = true;
            frontier.push_back(i);
        }
    }
    while (!frontier.empty()) {
        const Index j = frontier.front();
        frontier.pop_front();
        for (Index i = 0; i < n; ++i) {
            if (adjacency(i, j) > 0.0 && !seen[static_cast<std::size_t>(i)]) {
                seen[static_cast<std::size_t>(i)] = true;
                frontier.push_back(i);
            }
        }
    }
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

} // namespace detail

inline CommGraph build_graph(const Matrix& adjacency, const Vector& pinning) {
    detail::require_square(adjacency, "adjacency");
    detail::require_finite(adjacency, "adjacency");
    detail::require_finite(pinning, "pinning");
    const Index n = adjacency.rows();
    if (n == 0) {
        throw Error(ErrorKind::DimensionMismatch, "graph needs at least one agent");
    }
    if (pinning.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "pinning vector length differs from agent count");
    }
    if ((adjacency.array() < 0.0).any() || (pinning.array() < 0.0).any()) {
        throw Error(ErrorKind::NegativeWeight, "edge and pinning weights must be nonnegative");
    }
    if (adjacency.diagonal().cwiseAbs().maxCoeff() != 0.0) {
        throw Error(ErrorKind::InvalidParameter, "adjacency diagonal must be zero");
    }
    if (!detail::leader_reaches_all(adjacency, pinning)) {
        throw Error(ErrorKind::LeaderUnreachable, "some follower has no directed path from the leader");
    }

    CommGraph g;
    g.n_agents = n;
    g.adjacency = adjacency;
    g.pinning = pinning;
    g.degree = adjacency.rowwise().sum();
    g.laplacian = -adjacency;
    g.laplacian.diagonal() = g.degree;
    const Vector normalizer = Vector::Ones(n) + g.degree + pinning;
    g.gamma = normalizer.cwiseInverse().asDiagonal() * g.laplacian_plus_pinning();
    return g;
}

/// Smallest admissible continuous coupling gain, 1 / (2 min Re lambda(L + B)).
inline double continuous_coupling_bound(const CommGraph& g) {
    double min_re = std::numeric_limits<double>::infinity();
    for (const auto& z : eigvals(g.laplacian_plus_pinning())) {
        min_re = std::min(min_re, z.real());
    }
    if (!(min_re > 0.0)) {
        throw Error(ErrorKind::NonPositiveEigenvalue, "L + B has an eigenvalue with nonpositive real part");
    }
    return 1.0 / (2.0 * min_re);
}

struct GainResult {
    Matrix K;
    Matrix P;
};

/// K = R^{-1} B' P with P the stabilizing CARE solution.
inline GainResult lqr_gain_continuous(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
    GainResult out;
    out.P = solve_care(A, B, Q, R);
    out.K = solve_linear(R, B.transpose() * out.P);
    return out;
}

/// K = (B'PB)^{-1} B'PA with P from the control-weight-free Riccati-like equation.
inline GainResult gain_discrete(const Matrix& A, const Matrix& B, const Matrix& Q) {
    GainResult out;
    out.P = solve_dare_cheap(A, B, Q);
    const Matrix BtP = B.transpose() * out.P;
    out.K = solve_linear(BtP * B, BtP * A);
    return out;
}

/// Stability radius of the cheap-control discrete loop. Returns +infinity
/// when the inner matrix vanishes (e.g. A = 0).
inline double stability_radius_discrete(const Matrix& A, const Matrix& B, const Matrix& P, const Matrix& Q) {
    const Matrix BtP = B.transpose() * P;
    const Matrix W = (BtP * A).transpose() * solve_linear(BtP * B, BtP * A);
    const Matrix Qis = spd_inverse_sqrt(Q);
    const double s = sigma_max(Qis.transpose() * W * Qis);
    if (s == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 1.0 / std::sqrt(s);
}

/// Radius of the smallest circle centred at (1/c, 0) that contains eig(Gamma).
inline double covering_radius(const CommGraph& g, double c) {
    if (!(c > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "coupling gain must be positive");
    }
    const Complex centre(1.0 / c, 0.0);
    double r0 = 0.0;
    for (const auto& z : eigvals(g.gamma)) {
        r0 = std::max(r0, std::abs(z - centre));
    }
    return r0;
}

inline bool discrete_coupling_feasible(const CommGraph& g, double c, double r) {
    return c * covering_radius(g, c) < r;
}

/// Coupling gain minimizing c * r0(c): log grid on [1e-2, 1e2] followed by
/// golden-section refinement around the best grid point. Throws Infeasible
/// when the minimum is not below `r`.
inline double select_discrete_coupling(const CommGraph& g, double r) {
    if (!(r > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "stability radius must be positive");
    }
    const ComplexSpectrum spectrum = eigvals(g.gamma);
    const auto objective = [&](double c) {
        double worst = 0.0;
        for (const auto& z : spectrum) {
            worst = std::max(worst, std::abs(c * z - 1.0));
        }
        return worst;
    };

    constexpr int kGrid = 1000;
    const double lo = std::log(1e-2);
    const double hi = std::log(1e2);
    const double h = (hi - lo) / (kGrid - 1);
    int best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (int k = 0; k < kGrid; ++k) {
        const double v = objective(std::exp(lo + h * k));
        if (v < best_value) {
            best_value = v;
            best = k;
        }
    }

    // golden section in log c on the neighbouring grid cells
    double a = lo + h * std::max(best - 1, 0);
    double b = lo + h * std::min(best + 1, kGrid - 1);
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - phi * (b - a);
    double x2 = a + phi * (b - a);
    double f1 = objective(std::exp(x1));
    double f2 = objective(std::exp(x2));
    for (int it = 0; it < 200 && (b - a) > 1e-14; ++it) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = objective(std::exp(x1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = objective(std::exp(x2));
        }
    }
    double c = std::exp(0.5 * (a + b));
    if (objective(c) > best_value) {
        c = std::exp(lo + h * best);
    }
    if (!(objective(c) < r)) {
        throw Error(ErrorKind::Infeasible, "min c*r0(c) = " + std::to_string(objective(c)) +
                                               " is not below the stability radius " + std::to_string(r));
    }
    return c;
}

/// e_i = sum_j a_ij (x_j - x_i) + b_i (x_0 - x_i), with zero-based i.
inline Vector neighborhood_error(const CommGraph& g, std::span<const Vector> agent_states, const Vector& leader_state,
                                 Index i) {
    if (static_cast<Index>(agent_states.size()) != g.n_agents) {
        throw Error(ErrorKind::DimensionMismatch, "one state per follower expected");
    }
    if (i < 0 || i >= g.n_agents) {
        throw Error(ErrorKind::InvalidParameter, "agent index out of range");
    }
    const Vector& own = agent_states[static_cast<std::size_t>(i)];
    for (const auto& x : agent_states) {
        if (x.size() != own.size()) {
            throw Error(ErrorKind::DimensionMismatch, "agent states differ in dimension");
        }
    }
    if (leader_state.size() != own.size()) {
        throw Error(ErrorKind::DimensionMismatch, "leader state dimension differs");
    }
    Vector e = Vector::Zero(own.size());
    for (Index j = 0; j < g.n_agents; ++j) {
        const double a = g.adjacency(i, j);
        if (a != 0.0) {
            e += a * (agent_states[static_cast<std::size_t>(j)] - own);
        }
    }
    if (g.pinning(i) != 0.0) {
        e += g.pinning(i) * (leader_state - own);
    }
    return e;
}

struct SubsystemWeights {
    Matrix Q_s, Q_f, R_s, R_f;

    /// Q = I everywhere, R = 0.001 I (R is unused by the discrete gains).
    static SubsystemWeights defaults(Index n1, Index n2, Index m) {
        return {Matrix::Identity(n1, n1), Matrix::Identity(n2, n2), 1e-3 * Matrix::Identity(m, m),
                1e-3 * Matrix::Identity(m, m)};
    }
};

struct SynchronizationGains {
    ModelKind kind = ModelKind::continuous;
    Matrix K_s, K_f;
    Matrix P_s, P_f;
    SubsystemWeights weights;
    double c = 0.0;    // continuous coupling
    double c_s = 0.0;  // discrete slow coupling
    double c_f = 0.0;  // discrete fast coupling
    double r_s = 0.0;  // discrete stability radii
    double r_f = 0.0;
    double r0_s = 0.0; // covering radii at c_s, c_f
    double r0_f = 0.0;
};

inline SynchronizationGains synthesize_continuous(const ChangDecomposition& d, const CommGraph& g,
                                                  const SubsystemWeights& w, std::optional<double> coupling) {
    SynchronizationGains out;
    out.kind = ModelKind::continuous;
    out.weights = w;
    auto slow = lqr_gain_continuous(d.A_s, d.B_s, w.Q_s, w.R_s);
    auto fast = lqr_gain_continuous(d.A_f, d.B_f, w.Q_f, w.R_f);
    out.K_s = std::move(slow.K);
    out.P_s = std::move(slow.P);
    out.K_f = std::move(fast.K);
    out.P_f = std::move(fast.P);
    out.c = coupling ? *coupling : continuous_coupling_bound(g);
    if (!(out.c > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "coupling gain must be positive");
    }
    return out;
}

/// Discrete gains. Without explicit couplings, each of c_s, c_f is chosen by
/// select_discrete_coupling against its own radius. Explicit couplings are
/// stored as given; feasibility is reported through the certificate helpers.
inline SynchronizationGains synthesize_discrete(const ChangDecomposition& d, const CommGraph& g,
                                                const SubsystemWeights& w, std::optional<double> c_s,
                                                std::optional<double> c_f) {
    SynchronizationGains out;
    out.kind = ModelKind::discrete;
    out.weights = w;
    auto slow = gain_discrete(d.A_s, d.B_s, w.Q_s);
    auto fast = gain_discrete(d.A_f, d.B_f, w.Q_f);
    out.r_s = stability_radius_discrete(d.A_s, d.B_s, slow.P, w.Q_s);
    out.r_f = stability_radius_discrete(d.A_f, d.B_f, fast.P, w.Q_f);
    out.K_s = std::move(slow.K);
    out.P_s = std::move(slow.P);
    out.K_f = std::move(fast.K);
    out.P_f = std::move(fast.P);
    out.c_s = c_s ? *c_s : select_discrete_coupling(g, out.r_s);
    out.c_f = c_f ? *c_f : select_discrete_coupling(g, out.r_f);
    out.r0_s = covering_radius(g, out.c_s);
    out.r0_f = covering_radius(g, out.c_f);
    return out;
}

inline bool discrete_couplings_feasible(const SynchronizationGains& k) {
    return k.c_s * k.r0_s < k.r_s && k.c_f * k.r0_f < k.r_f;
}

inline void check_control_inputs(const SynchronizationGains& k, const Vector& e_s, const Vector& e_f) {
    if (e_s.size() != k.K_s.cols() || e_f.size() != k.K_f.cols()) {
        throw Error(ErrorKind::DimensionMismatch, "subsystem errors do not match gain shapes");
    }
}

/// u = c (K_s e_s + K_f e_f)
inline Vector control_continuous(const SynchronizationGains& k, const Vector& e_s, const Vector& e_f) {
    if (k.kind != ModelKind::continuous) {
        throw Error(ErrorKind::InvalidParameter, "continuous control law needs continuous gains");
    }
    check_control_inputs(k, e_s, e_f);
    return k.c * (k.K_s * e_s + k.K_f * e_f);
}

/// u = (1 + d_i + b_i)^{-1} (c_s K_s e_s + c_f K_f e_f), zero-based i.
inline Vector control_discrete(const SynchronizationGains& k, const CommGraph& g, Index i, const Vector& e_s,
                               const Vector& e_f) {
    if (k.kind != ModelKind::discrete) {
        throw Error(ErrorKind::InvalidParameter, "discrete control law needs discrete gains");
    }
    if (i < 0 || i >= g.n_agents) {
        throw Error(ErrorKind::InvalidParameter, "agent index out of range");
    }
    check_control_inputs(k, e_s, e_f);
    return (k.c_s * (k.K_s * e_s) + k.c_f * (k.K_f * e_f)) / g.normalizer(i);
}

/// One subsystem-level stability check A_x - c lambda B_x K_x.
struct CertificateEntry {
    char subsystem = 's';  // 's' or 'f'
    Complex lambda;
    double margin = 0.0;   // spectral abscissa (continuous) or spectral radius (discrete)
    bool ok = false;
};

/// Per-subsystem closed-loop checks over eig(L + B) (continuous) or
/// eig(Gamma) (discrete).
inline std::vector<CertificateEntry> subsystem_certificates(const ChangDecomposition& d, const CommGraph& g,
                                                            const SynchronizationGains& k) {
    std::vector<CertificateEntry> out;
    const bool continuous = k.kind == ModelKind::continuous;
    const ComplexSpectrum lambdas = eigvals(continuous ? g.laplacian_plus_pinning() : g.gamma);
    const auto add = [&](char tag, const Matrix& A, const Matrix& B, const Matrix& K, double c) {
        for (const auto& lam : lambdas) {
            const ComplexMatrix Acl = A.cast<Complex>() - (c * lam) * (B * K).cast<Complex>();
            Eigen::ComplexEigenSolver<ComplexMatrix> es(Acl, false);
            double margin = continuous ? -std::numeric_limits<double>::infinity() : 0.0;
            for (Index i = 0; i < es.eigenvalues().size(); ++i) {
                const Complex z = es.eigenvalues()(i);
                margin = continuous ? std::max(margin, z.real()) : std::max(margin, std::abs(z));
            }
            out.push_back({tag, lam, margin, continuous ? margin < 0.0 : margin < 1.0});
        }
    };
    add('s', d.A_s, d.B_s, k.K_s, continuous ? k.c : k.c_s);
    add('f', d.A_f, d.B_f, k.K_f, continuous ? k.c : k.c_f);
    return out;
}

/// Gain acting on a raw full-state error e: u = composite_gain * e before
/// the per-agent normalizer (discrete) is applied.
inline Matrix composite_gain(const ChangDecomposition& d, const SynchronizationGains& k) {
    const auto [Ts, Tf] = transform_matrices(d);
    if (k.kind == ModelKind::continuous) {
        return k.c * (k.K_s * Ts + k.K_f * Tf);
    }
    return k.c_s * (k.K_s * Ts) + k.c_f * (k.K_f * Tf);
}

/// Exact tracking-error modes of the composite loop on the original plant:
/// A - lambda B G with G = composite_gain and lambda over eig(L + B) or
/// eig(Gamma). Returns the worst spectral abscissa (continuous) or radius
/// (discrete).
inline double composite_error_margin(const ChangDecomposition& d, const PartitionedLinearModel& model,
                                     const CommGraph& g, const SynchronizationGains& k) {
    const auto full = full_matrices(model);
    const Matrix BG = full.B * composite_gain(d, k);
    const bool continuous = k.kind == ModelKind::continuous;
    double worst = continuous ? -std::numeric_limits<double>::infinity() : 0.0;
    for (const auto& lam : eigvals(continuous ? g.laplacian_plus_pinning() : g.gamma)) {
        const ComplexMatrix Acl = full.A.cast<Complex>() - lam * BG.cast<Complex>();
        Eigen::ComplexEigenSolver<ComplexMatrix> es(Acl, false);
        for (Index i = 0; i < es.eigenvalues().size(); ++i) {
            const Complex z = es.eigenvalues()(i);
            worst = continuous ? std::max(worst, z.real()) : std::max(worst, std::abs(z));
        }
    }
    return worst;
}

} // namespace spats
