#pragma once

// Two-time-scale models and their exact slow/fast decoupling.
//
// Continuous plants are held in the slow-time-scale form
//     x1' = A1 x1 + A2 x2 + B1 u
//   eps x2' = A3 x1 + A4 x2 + B2 u
// and discrete plants in the fast-time-scale form
//     x1(k+1) = (I + eps A1) x1 + eps A2 x2 + eps B1 u
//     x2(k+1) = A3 x1 + A4 x2 + B2 u.
// The decoupling uses x_f = x2 + M x1 and x_s = x1 - N x_f (continuous) or
// x_s = x1 - eps N x_f (discrete).

#include <cstdlib>
#include <optional>
#include <string>

#include "spats/matlib.hpp"

namespace spats {

enum class ModelKind { continuous, discrete };

constexpr std::string_view to_string(ModelKind kind) {
    return kind == ModelKind::continuous ? "continuous" : "discrete";
}

struct PartitionedLinearModel {
    ModelKind kind = ModelKind::continuous;
    Matrix A1, A2, A3, A4;
    Matrix B1, B2;
    double epsilon = 0.0;

    Index n1() const { return A1.rows(); }
    Index n2() const { return A4.rows(); }
    Index m() const { return B1.cols(); }
    Index n() const { return n1() + n2(); }

    /// Shape checks only; the fast-block nonsingularity gate lives in
    /// require_regular_fast_block().
    void validate_shapes() const {
        detail::require_square(A1, "A1");
        detail::require_square(A4, "A4");
        detail::require_shape(A2, n1(), n2(), "A2");
        detail::require_shape(A3, n2(), n1(), "A3");
        detail::require_shape(B1, n1(), B1.cols(), "B1");
        detail::require_shape(B2, n2(), m(), "B2");
        if (n1() == 0 || n2() == 0 || m() == 0) {
            throw Error(ErrorKind::DimensionMismatch, "model dimensions must be positive");
        }
        for (const Matrix* block : {&A1, &A2, &A3, &A4, &B1, &B2}) {
            detail::require_finite(*block, "model block");
        }
        if (!(epsilon >= 0.0 && epsilon < 1.0)) {
            throw Error(ErrorKind::InvalidParameter, "epsilon must lie in [0, 1)");
        }
    }

    /// The matrix whose inverse seeds the Newton iteration: A4 (continuous)
    /// or A4 - I (discrete).
    Matrix fast_block() const {
        return kind == ModelKind::continuous ? A4 : Matrix(A4 - Matrix::Identity(n2(), n2()));
    }

    void require_regular_fast_block(const Tolerances& tol = {}) const {
        const Matrix F = fast_block();
        Eigen::PartialPivLU<Matrix> lu(F);
        if (!(lu.rcond() > 1.0 / tol.condition_bound)) {
            throw Error(ErrorKind::SingularFastBlock,
                        kind == ModelKind::continuous ? "A4 is singular" : "I - A4 is singular");
        }
    }
};

struct StateSpaceMatrices {
    Matrix A;
    Matrix B;
};

/// Un-partitioned plant matrices (inverse of partition_full_model).
inline StateSpaceMatrices full_matrices(const PartitionedLinearModel& model) {
    const Index n1 = model.n1();
    const Index n2 = model.n2();
    const double eps = model.epsilon;
    StateSpaceMatrices out{Matrix(n1 + n2, n1 + n2), Matrix(n1 + n2, model.m())};
    if (model.kind == ModelKind::continuous) {
        out.A << model.A1, model.A2, model.A3 / eps, model.A4 / eps;
        out.B << model.B1, model.B2 / eps;
    } else {
        out.A << Matrix::Identity(n1, n1) + eps * model.A1, eps * model.A2, model.A3, model.A4;
        out.B << eps * model.B1, model.B2;
    }
    return out;
}

inline PartitionedLinearModel partition_full_model(const Matrix& A, const Matrix& B, Index n1, Index n2,
                                                   double epsilon, ModelKind kind) {
    if (n1 <= 0 || n2 <= 0) {
        throw Error(ErrorKind::DimensionMismatch, "n1 and n2 must be positive");
    }
    detail::require_shape(A, n1 + n2, n1 + n2, "A");
    if (B.rows() != n1 + n2 || B.cols() <= 0) {
        throw Error(ErrorKind::DimensionMismatch, "B must have n1+n2 rows and at least one column");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw Error(ErrorKind::InvalidParameter, "epsilon must lie in (0, 1)");
    }

    PartitionedLinearModel model;
    model.kind = kind;
    model.epsilon = epsilon;
    const auto upper_left = A.topLeftCorner(n1, n1);
    const auto upper_right = A.topRightCorner(n1, n2);
    const auto lower_left = A.bottomLeftCorner(n2, n1);
    const auto lower_right = A.bottomRightCorner(n2, n2);
    if (kind == ModelKind::continuous) {
        model.A1 = upper_left;
        model.A2 = upper_right;
        model.A3 = epsilon * lower_left;
        model.A4 = epsilon * lower_right;
        model.B1 = B.topRows(n1);
        model.B2 = epsilon * B.bottomRows(n2);
    } else {
        model.A1 = (upper_left - Matrix::Identity(n1, n1)) / epsilon;
        model.A2 = upper_right / epsilon;
        model.A3 = lower_left;
        model.A4 = lower_right;
        model.B1 = B.topRows(n1) / epsilon;
        model.B2 = B.bottomRows(n2);
    }
    model.validate_shapes();
    model.require_regular_fast_block();
    return model;
}

inline constexpr double kDefaultNewtonTolerance = 1e-12;
inline constexpr int kDefaultNewtonIterations = 50;

/// Newton tolerance, overridable through the SPATS_TOL environment variable.
inline double default_newton_tolerance() {
    if (const char* env = std::getenv("SPATS_TOL")) {
        char* end = nullptr;
        const double value = std::strtod(env, &end);
        if (end != env && value > 0.0 && std::isfinite(value)) {
            return value;
        }
    }
    return kDefaultNewtonTolerance;
}

struct NewtonOptions {
    double tol = default_newton_tolerance();
    int max_iterations = kDefaultNewtonIterations;
    /// Replaces the standard seed fast_block()^{-1} A3 when set.
    std::optional<Matrix> seed;
};

struct MSolution {
    Matrix M;
    int iterations = 0;
    double residual = 0.0;
};

/// Frobenius norm of the algebraic equation that makes the x1 coefficient
/// of the fast dynamics vanish.
inline double residual_M(const PartitionedLinearModel& model, const Matrix& M) {
    const double eps = model.epsilon;
    Matrix R = model.A3 + eps * M * model.A1 - model.A4 * M - eps * M * model.A2 * M;
    if (model.kind == ModelKind::discrete) {
        R += M;
    }
    return R.norm();
}

struct NewtonCoefficients {
    Matrix E1, E2, F;
};

inline NewtonCoefficients newton_coefficients(const PartitionedLinearModel& model, const Matrix& M) {
    const double eps = model.epsilon;
    return {model.fast_block() + eps * M * model.A2, -eps * (model.A1 - model.A2 * M),
            model.A3 + eps * M * model.A2 * M};
}

inline MSolution solve_M(const PartitionedLinearModel& model, const NewtonOptions& opts = {}) {
    model.validate_shapes();
    if (!(opts.tol > 0.0)) {
        throw Error(ErrorKind::InvalidParameter, "Newton tolerance must be positive");
    }
    MSolution out;
    if (opts.seed) {
        detail::require_shape(*opts.seed, model.n2(), model.n1(), "M seed");
        out.M = *opts.seed;
    } else {
        model.require_regular_fast_block();
        out.M = solve_linear(model.fast_block(), model.A3);
    }
    out.residual = residual_M(model, out.M);
    while (out.residual > opts.tol) {
        if (out.iterations >= opts.max_iterations) {
            throw Error(ErrorKind::NoConvergence, "M residual " + std::to_string(out.residual) + " after " +
                                                      std::to_string(out.iterations) + " Newton iterations");
        }
        const auto [E1, E2, F] = newton_coefficients(model, out.M);
        out.M = solve_sylvester(E1, E2, F);
        out.residual = residual_M(model, out.M);
        ++out.iterations;
    }
    return out;
}

inline double residual_N(const PartitionedLinearModel& model, const Matrix& M, const Matrix& N) {
    const auto c = newton_coefficients(model, M);
    return (N * c.E1 + c.E2 * N - model.A2).norm();
}

/// N from N E1 + E2 N = A2 with E1, E2 evaluated at the converged M.
inline Matrix solve_N(const PartitionedLinearModel& model, const Matrix& M) {
    const auto c = newton_coefficients(model, M);
    return solve_sylvester(c.E2, c.E1, model.A2);
}

struct ChangDecomposition {
    ModelKind kind = ModelKind::continuous;
    double epsilon = 0.0;
    Matrix M, N;
    Matrix A_f, B_f;
    Matrix A_s, B_s;
    int newton_iterations = 0;
    double residual_M = 0.0;
    double residual_N = 0.0;
    /// Set when eig(A_s) and eig(A_f) come closer than 1e-8 (poor time-scale separation).
    bool spectra_overlap_warning = false;

    Index n1() const { return A_s.rows(); }
    Index n2() const { return A_f.rows(); }
};

inline ChangDecomposition assemble_subsystems(const PartitionedLinearModel& model, const Matrix& M, const Matrix& N) {
    const double eps = model.epsilon;
    const Index n1 = model.n1();
    ChangDecomposition d;
    d.kind = model.kind;
    d.epsilon = eps;
    d.M = M;
    d.N = N;
    if (model.kind == ModelKind::continuous) {
        d.A_f = (model.A4 + eps * M * model.A2) / eps;
        d.B_f = (model.B2 + eps * M * model.B1) / eps;
        d.A_s = model.A1 - model.A2 * M;
        d.B_s = model.B1 - N * d.B_f;
    } else {
        d.A_f = eps * M * model.A2 + model.A4;
        d.B_f = M * model.B1 + model.B2;
        d.A_s = Matrix::Identity(n1, n1) + eps * model.A1 - eps * model.A2 * M;
        d.B_s = model.B1 - eps * N * d.B_f;
    }
    d.residual_M = spats::residual_M(model, M);
    d.residual_N = spats::residual_N(model, M, N);

    double closest = std::numeric_limits<double>::infinity();
    for (const auto& a : eigvals(d.A_s)) {
        for (const auto& b : eigvals(d.A_f)) {
            closest = std::min(closest, std::abs(a - b));
        }
    }
    d.spectra_overlap_warning = closest < 1e-8;
    return d;
}

/// solve_M, solve_N and assemble_subsystems in sequence.
inline ChangDecomposition decompose(const PartitionedLinearModel& model, const NewtonOptions& opts = {}) {
    const MSolution ms = solve_M(model, opts);
    const Matrix N = solve_N(model, ms.M);
    ChangDecomposition d = assemble_subsystems(model, ms.M, N);
    d.newton_iterations = ms.iterations;
    return d;
}

struct DecompositionReport {
    ComplexSpectrum spectrum_full;
    ComplexSpectrum spectrum_union;
    double max_eigen_gap = 0.0;
    double residual_M = 0.0;
    double residual_N = 0.0;
    double tolerance = 0.0;
    bool residual_M_ok = false;
    bool residual_N_ok = false;
    bool spectrum_ok = false;

    bool passed() const { return residual_M_ok && residual_N_ok && spectrum_ok; }
};

/// Re-evaluates both algebraic equations and compares eig(A_full) with
/// eig(A_s) + eig(A_f). `residual_tol` gates the residuals, `spectrum_tol`
/// the matched eigenvalue gap.
inline DecompositionReport verify_decomposition(const PartitionedLinearModel& model, const ChangDecomposition& d,
                                                double residual_tol = 1e-10, double spectrum_tol = 1e-6) {
    DecompositionReport r;
    r.spectrum_full = sorted(eigvals(full_matrices(model).A));
    ComplexSpectrum joined = eigvals(d.A_s);
    const ComplexSpectrum fast = eigvals(d.A_f);
    joined.insert(joined.end(), fast.begin(), fast.end());
    r.spectrum_union = sorted(std::move(joined));
    r.max_eigen_gap = matched_spectrum_distance(r.spectrum_full, r.spectrum_union);
    r.residual_M = residual_M(model, d.M);
    r.residual_N = residual_N(model, d.M, d.N);
    r.tolerance = residual_tol;
    r.residual_M_ok = r.residual_M <= residual_tol;
    r.residual_N_ok = r.residual_N <= residual_tol * std::max(1.0, model.A2.norm());
    r.spectrum_ok = r.max_eigen_gap <= spectrum_tol;
    return r;
}

struct SlowFastState {
    Vector x_s;
    Vector x_f;
};

inline SlowFastState transform_states(const ChangDecomposition& d, const Vector& x1, const Vector& x2) {
    if (x1.size() != d.M.cols() || x2.size() != d.M.rows()) {
        throw Error(ErrorKind::DimensionMismatch, "state blocks do not match decomposition");
    }
    SlowFastState out;
    out.x_f = x2 + d.M * x1;
    const double scale = d.kind == ModelKind::continuous ? 1.0 : d.epsilon;
    out.x_s = x1 - scale * d.N * out.x_f;
    return out;
}

/// Splits a full state into (x1, x2) and applies transform_states.
inline SlowFastState transform_state(const ChangDecomposition& d, const Vector& x) {
    if (x.size() != d.n1() + d.n2()) {
        throw Error(ErrorKind::DimensionMismatch, "state length does not match decomposition");
    }
    return transform_states(d, x.head(d.n1()), x.tail(d.n2()));
}

/// Inverse of transform_states, returned as the stacked (x1, x2).
inline Vector inverse_transform_states(const ChangDecomposition& d, const Vector& x_s, const Vector& x_f) {
    const double scale = d.kind == ModelKind::continuous ? 1.0 : d.epsilon;
    const Vector x1 = x_s + scale * d.N * x_f;
    Vector out(x1.size() + x_f.size());
    out << x1, x_f - d.M * x1;
    return out;
}

/// Row maps T_s, T_f with x_s = T_s x and x_f = T_f x.
inline std::pair<Matrix, Matrix> transform_matrices(const ChangDecomposition& d) {
    const Index n1 = d.n1();
    const Index n2 = d.n2();
    Matrix Tf(n2, n1 + n2);
    Tf << d.M, Matrix::Identity(n2, n2);
    Matrix Ts(n1, n1 + n2);
    Ts << Matrix::Identity(n1, n1), Matrix::Zero(n1, n2);
    const double scale = d.kind == ModelKind::continuous ? 1.0 : d.epsilon;
    Ts -= scale * d.N * Tf;
    return {Ts, Tf};
}

} // namespace spats
