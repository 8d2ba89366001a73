#pragma once

// Dense real-matrix kernels shared by the decomposition, protocol and
// simulation layers. Everything here is a pure function of its inputs.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "spats/error.hpp"

namespace spats {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;

/// Eigenvalues of a square matrix, in solver order unless sorted explicitly.
using ComplexSpectrum = std::vector<Complex>;

struct Tolerances {
    double residual = 1e-10;
    double condition_bound = 1e12;
};

namespace detail {

inline void require_finite(const Matrix& A, const char* name) {
    if (!A.allFinite()) {
        throw Error(ErrorKind::NonFinite, std::string(name) + " has non-finite entries");
    }
}

inline void require_square(const Matrix& A, const char* name) {
    if (A.rows() != A.cols()) {
        throw Error(ErrorKind::DimensionMismatch,
                    std::string(name) + " must be square, got " + std::to_string(A.rows()) + "x" +
                        std::to_string(A.cols()));
    }
}

inline void require_shape(const Matrix& A, Index rows, Index cols, const char* name) {
    if (A.rows() != rows || A.cols() != cols) {
        throw Error(ErrorKind::DimensionMismatch,
                    std::string(name) + " expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                        ", got " + std::to_string(A.rows()) + "x" + std::to_string(A.cols()));
    }
}

inline Matrix symmetrize(const Matrix& P) { return 0.5 * (P + P.transpose()); }

inline std::string sci(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", x);
    return buf;
}

// Moves the diagonal entries of the upper-triangular T selected by `keep`
// to the leading positions with adjacent Givens swaps, updating U so that
// U*T*U^H is preserved. Returns the number of selected entries.
template <typename Pred>
Index reorder_complex_schur(ComplexMatrix& T, ComplexMatrix& U, Pred keep) {
    const Index n = T.rows();
    Index placed = 0;
    for (Index j = 0; j < n; ++j) {
        if (!keep(T(j, j))) {
            continue;
        }
        for (Index i = j - 1; i >= placed; --i) {
            Eigen::JacobiRotation<Complex> rot;
            rot.makeGivens(T(i, i + 1), T(i + 1, i + 1) - T(i, i));
            T.applyOnTheLeft(i, i + 1, rot.adjoint());
            T.applyOnTheRight(i, i + 1, rot);
            U.applyOnTheRight(i, i + 1, rot);
            T(i + 1, i) = Complex(0.0, 0.0);
        }
        ++placed;
    }
    return placed;
}

} // namespace detail

inline ComplexSpectrum sorted(ComplexSpectrum values) {
    std::sort(values.begin(), values.end(), [](const Complex& a, const Complex& b) {
        if (a.real() != b.real()) {
            return a.real() < b.real();
        }
        return a.imag() < b.imag();
    });
    return values;
}

/// Solves A X = B. Throws SingularMatrix when the reciprocal condition
/// estimate of A falls below 1/tol.condition_bound.
inline Matrix solve_linear(const Matrix& A, const Matrix& B, const Tolerances& tol = {}) {
    detail::require_square(A, "A");
    detail::require_finite(A, "A");
    detail::require_finite(B, "B");
    if (B.rows() != A.rows()) {
        throw Error(ErrorKind::DimensionMismatch, "solve_linear: row count of B does not match A");
    }
    if (A.size() == 0) {
        return Matrix(0, B.cols());
    }
    Eigen::PartialPivLU<Matrix> lu(A);
    const double rcond = lu.rcond();
    if (!(rcond > 1.0 / tol.condition_bound)) {
        throw Error(ErrorKind::SingularMatrix,
                    "reciprocal condition estimate " + std::to_string(rcond) + " below threshold");
    }
    Matrix X = lu.solve(B);
    // one step of iterative refinement
    X += lu.solve(B - A * X);
    return X;
}

/// Triangular input returns its diagonal untouched (pinned graph Laplacians
/// of trees are triangular, and c_min must come out exact for them).
inline ComplexSpectrum eigvals(const Matrix& A) {
    detail::require_square(A, "A");
    detail::require_finite(A, "A");
    if (A.size() == 0) {
        return {};
    }
    if (A.isUpperTriangular(0.0) || A.isLowerTriangular(0.0)) {
        ComplexSpectrum diag;
        for (Index i = 0; i < A.rows(); ++i) {
            diag.emplace_back(A(i, i), 0.0);
        }
        return diag;
    }
    Eigen::EigenSolver<Matrix> solver(A, false);
    if (solver.info() != Eigen::Success) {
        throw Error(ErrorKind::NoConvergence, "eigenvalue iteration did not converge");
    }
    const auto& ev = solver.eigenvalues();
    return ComplexSpectrum(ev.data(), ev.data() + ev.size());
}

/// max Re(lambda); negative iff A is Hurwitz.
inline double spectral_abscissa(const Matrix& A) {
    double out = -std::numeric_limits<double>::infinity();
    for (const auto& z : eigvals(A)) {
        out = std::max(out, z.real());
    }
    return out;
}

/// max |lambda|; below one iff A is Schur stable.
inline double spectral_radius(const Matrix& A) {
    double out = 0.0;
    for (const auto& z : eigvals(A)) {
        out = std::max(out, std::abs(z));
    }
    return out;
}

inline double sigma_max(const Matrix& A) {
    detail::require_finite(A, "A");
    if (A.size() == 0) {
        return 0.0;
    }
    Eigen::JacobiSVD<Matrix> svd(A);
    return svd.singularValues()(0);
}

/// Bottleneck distance between two spectra of equal size: the smallest
/// achievable maximum pairwise gap over all one-to-one pairings. Exact
/// enumeration up to eight values, greedy nearest-pair matching beyond.
inline double matched_spectrum_distance(const ComplexSpectrum& a, const ComplexSpectrum& b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::DimensionMismatch, "spectra have different cardinality");
    }
    const std::size_t n = a.size();
    if (n == 0) {
        return 0.0;
    }
    if (n <= 8) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        double best = std::numeric_limits<double>::infinity();
        do {
            double worst = 0.0;
            for (std::size_t i = 0; i < n && worst < best; ++i) {
                worst = std::max(worst, std::abs(a[i] - b[perm[i]]));
            }
            best = std::min(best, worst);
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }
    struct Pair {
        double d;
        std::size_t i, j;
    };
    std::vector<Pair> pairs;
    pairs.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            pairs.push_back({std::abs(a[i] - b[j]), i, j});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) { return x.d < y.d; });
    std::vector<bool> used_a(n, false), used_b(n, false);
    double worst = 0.0;
    for (const auto& p : pairs) {
        if (!used_a[p.i] && !used_b[p.j]) {
            used_a[p.i] = used_b[p.j] = true;
            worst = std::max(worst, p.d);
        }
    }
    return worst;
}

/// Solves E1 X + X E2 = F (Bartels-Stewart on complex Schur forms).
/// Throws SpectrumOverlap when some lambda(E1) + mu(E2) is numerically zero.
inline Matrix solve_sylvester(const Matrix& E1, const Matrix& E2, const Matrix& F, const Tolerances& tol = {}) {
    detail::require_square(E1, "E1");
    detail::require_square(E2, "E2");
    detail::require_shape(F, E1.rows(), E2.rows(), "F");
    detail::require_finite(E1, "E1");
    detail::require_finite(E2, "E2");
    detail::require_finite(F, "F");
    const Index p = E1.rows();
    const Index q = E2.rows();
    if (p == 0 || q == 0) {
        return Matrix::Zero(p, q);
    }

    Eigen::ComplexSchur<Matrix> schur1(E1);
    Eigen::ComplexSchur<Matrix> schur2(E2);
    if (schur1.info() != Eigen::Success || schur2.info() != Eigen::Success) {
        throw Error(ErrorKind::NoConvergence, "Schur reduction did not converge");
    }
    const ComplexMatrix& T = schur1.matrixT();
    const ComplexMatrix& U = schur1.matrixU();
    const ComplexMatrix& S = schur2.matrixT();
    const ComplexMatrix& V = schur2.matrixU();

    const double scale = std::max(1.0, E1.norm() + E2.norm());
    double gap = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < p; ++i) {
        for (Index k = 0; k < q; ++k) {
            gap = std::min(gap, std::abs(T(i, i) + S(k, k)));
        }
    }
    if (gap <= 1e-10 * scale) {
        throw Error(ErrorKind::SpectrumOverlap,
                    "spectra of E1 and -E2 intersect (min gap " + std::to_string(gap) + ")");
    }

    // T Y + Y S = G with G = U^H F V, solved column by column since S is upper triangular.
    const ComplexMatrix G = U.adjoint() * F.cast<Complex>() * V;
    ComplexMatrix Y(p, q);
    for (Index k = 0; k < q; ++k) {
        Eigen::VectorXcd rhs = G.col(k);
        for (Index j = 0; j < k; ++j) {
            rhs -= S(j, k) * Y.col(j);
        }
        ComplexMatrix shifted = T;
        shifted.diagonal().array() += S(k, k);
        Y.col(k) = shifted.triangularView<Eigen::Upper>().solve(rhs);
    }
    Matrix X = (U * Y * V.adjoint()).real();

    const double bound = tol.residual * std::max(1.0, F.norm());
    const Matrix R = F - E1 * X - X * E2;
    if (R.norm() > bound) {
        // Refine once by solving for the correction with the same factorization.
        const ComplexMatrix Gr = U.adjoint() * R.cast<Complex>() * V;
        ComplexMatrix Z(p, q);
        for (Index k = 0; k < q; ++k) {
            Eigen::VectorXcd rhs = Gr.col(k);
            for (Index j = 0; j < k; ++j) {
                rhs -= S(j, k) * Z.col(j);
            }
            ComplexMatrix shifted = T;
            shifted.diagonal().array() += S(k, k);
            Z.col(k) = shifted.triangularView<Eigen::Upper>().solve(rhs);
        }
        X += (U * Z * V.adjoint()).real();
    }
    return X;
}

inline double care_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R, const Matrix& P) {
    const Matrix G = B * solve_linear(R, B.transpose());
    return (A.transpose() * P + P * A + Q - P * G * P).norm();
}

/// Stabilizing solution of A'P + PA + Q - P B R^{-1} B' P = 0.
///
/// Built from the stable invariant subspace of the Hamiltonian matrix
/// [A, -BR^{-1}B'; -Q, -A'] (ordered complex Schur form), followed by one
/// Newton (Kleinman) refinement step.
inline Matrix solve_care(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
    detail::require_square(A, "A");
    const Index n = A.rows();
    const Index m = B.cols();
    detail::require_shape(B, n, m, "B");
    detail::require_shape(Q, n, n, "Q");
    detail::require_shape(R, m, m, "R");
    detail::require_finite(A, "A");
    detail::require_finite(B, "B");
    detail::require_finite(Q, "Q");
    detail::require_finite(R, "R");

    const Matrix G = B * solve_linear(R, B.transpose());
    Matrix H(2 * n, 2 * n);
    H << A, -G, -Q, -A.transpose();

    Eigen::ComplexSchur<Matrix> schur(H);
    if (schur.info() != Eigen::Success) {
        throw Error(ErrorKind::NoConvergence, "Hamiltonian Schur reduction did not converge");
    }
    ComplexMatrix T = schur.matrixT();
    ComplexMatrix U = schur.matrixU();
    const double axis_tol = 1e-12 * std::max(1.0, H.norm());
    for (Index i = 0; i < 2 * n; ++i) {
        if (std::abs(T(i, i).real()) <= axis_tol) {
            throw Error(ErrorKind::NotStabilizable, "Hamiltonian has eigenvalues on the imaginary axis");
        }
    }
    const Index stable = detail::reorder_complex_schur(T, U, [](const Complex& z) { return z.real() < 0.0; });
    if (stable != n) {
        throw Error(ErrorKind::NotStabilizable, "stable invariant subspace has wrong dimension");
    }

    const ComplexMatrix U11 = U.topLeftCorner(n, n);
    const ComplexMatrix U21 = U.bottomLeftCorner(n, n);
    Eigen::PartialPivLU<ComplexMatrix> lu(U11.transpose());
    if (!(lu.rcond() > 1e-12)) {
        throw Error(ErrorKind::NotStabilizable, "invariant subspace basis is not invertible");
    }
    // P = U21 U11^{-1}, computed as the transpose solve U11^T P^T = U21^T.
    const ComplexMatrix Pc = lu.solve(U21.transpose()).transpose();
    Matrix P = Pc.real();
    const double pnorm = std::max(P.norm(), std::numeric_limits<double>::min());
    const double drift = (P - P.transpose()).norm() + Pc.imag().norm();
    if (drift > 1e-6 * pnorm) {
        throw Error(ErrorKind::AsymmetryDrift, "Riccati solution asymmetry " + std::to_string(drift / pnorm));
    }
    P = detail::symmetrize(P);

    // Kleinman step: (A - GP)' X + X (A - GP) = -(Q + P G P)
    const Matrix closed = A - G * P;
    Matrix refined = detail::symmetrize(solve_sylvester(closed.transpose(), closed, -(Q + P * G * P)));
    if (care_residual(A, B, Q, R, refined) < care_residual(A, B, Q, R, P)) {
        P = refined;
    }

    // relative to the size of the terms that cancel
    const double residual = care_residual(A, B, Q, R, P);
    const double scale = std::max({Q.norm(), (A.transpose() * P).norm(), (P * G * P).norm(), 1e-300});
    if (residual > 1e-8 * scale) {
        throw Error(ErrorKind::NotStabilizable, "CARE residual " + detail::sci(residual) + " too large");
    }
    if (!(spectral_abscissa(A - G * P) < 0.0)) {
        throw Error(ErrorKind::NotStabilizable, "closed loop is not Hurwitz");
    }
    return P;
}

struct DareCheapOptions {
    double relative_step_tol = 1e-12;
    int max_iterations = 10000;
    double condition_bound = 1e12;
};

/// One application of P -> Q + A'PA - A'PB (B'PB)^{-1} B'PA.
inline Matrix dare_cheap_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& P,
                             double condition_bound = 1e12) {
    const Matrix BtPB = B.transpose() * P * B;
    Eigen::PartialPivLU<Matrix> lu(BtPB);
    if (BtPB.size() > 0 && !(lu.rcond() > 1.0 / condition_bound)) {
        throw Error(ErrorKind::PivotBreakdown, "B'PB is numerically singular");
    }
    const Matrix BtPA = B.transpose() * P * A;
    return detail::symmetrize(Q + A.transpose() * P * A - BtPA.transpose() * lu.solve(BtPA));
}

inline double dare_cheap_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& P) {
    const Matrix BtPB = B.transpose() * P * B;
    const Matrix BtPA = B.transpose() * P * A;
    return (A.transpose() * P * A - P + Q - BtPA.transpose() * BtPB.partialPivLu().solve(BtPA)).norm();
}

/// Riccati-like equation with no control weight, solved by the fixed-point
/// iteration of dare_cheap_map started at P = Q.
inline Matrix solve_dare_cheap(const Matrix& A, const Matrix& B, const Matrix& Q, const DareCheapOptions& opts = {}) {
    detail::require_square(A, "A");
    const Index n = A.rows();
    detail::require_shape(B, n, B.cols(), "B");
    detail::require_shape(Q, n, n, "Q");
    detail::require_finite(A, "A");
    detail::require_finite(B, "B");
    detail::require_finite(Q, "Q");
    if (B.cols() > n) {
        throw Error(ErrorKind::DimensionMismatch, "input dimension exceeds state dimension");
    }

    Matrix P = detail::symmetrize(Q);
    for (int k = 0; k < opts.max_iterations; ++k) {
        Matrix next = dare_cheap_map(A, B, Q, P, opts.condition_bound);
        const double step = (next - P).norm();
        const double ref = P.norm();
        P = std::move(next);
        if (step <= opts.relative_step_tol * ref) {
            const double residual = dare_cheap_residual(A, B, Q, P);
            if (residual > 1e-8 * Q.norm()) {
                throw Error(ErrorKind::NoConvergence, "fixed point residual " + std::to_string(residual));
            }
            return P;
        }
    }
    throw Error(ErrorKind::NoConvergence,
                "Riccati-like iteration did not settle in " + std::to_string(opts.max_iterations) + " steps");
}

/// Symmetric positive-definite inverse square root.
inline Matrix spd_inverse_sqrt(const Matrix& Q) {
    detail::require_square(Q, "Q");
    Eigen::SelfAdjointEigenSolver<Matrix> es(detail::symmetrize(Q));
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
        throw Error(ErrorKind::SingularMatrix, "matrix is not positive definite");
    }
    return es.operatorInverseSqrt();
}

} // namespace spats
