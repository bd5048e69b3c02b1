#pragma once

// Density matrices, angular momentum operators and the scalar functionals
// (distance to target, purity Lyapunov function) used by the controller
// and the experiment harness.

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "qfb/errors.hpp"

namespace qfb {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using RealVector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr Complex kI{0.0, 1.0};

struct ToleranceConfig {
    double herm = 1e-9;
    double trace = 1e-9;
    double psd = 1e-9;

    void validate() const {
        if (!(herm >= 0.0) || !(trace >= 0.0) || !(psd >= 0.0)) {
            throw InvalidArgument("tolerances must be nonnegative");
        }
    }
};

/// Returns an empty string if `m` is a density matrix within `tol`,
/// otherwise a description of the first violated condition.
inline std::string state_violation(const Matrix& m, const ToleranceConfig& tol = {}) {
    if (m.rows() != m.cols()) return "matrix is not square";
    if (m.rows() < 2) return "dimension must be at least 2";
    if (!m.allFinite()) return "matrix has non-finite entries";
    const double herm_err = (m - m.adjoint()).norm();
    if (herm_err > tol.herm) {
        std::ostringstream os;
        os << "not Hermitian: |rho - rho*|_F = " << herm_err;
        return os.str();
    }
    const double tr = m.trace().real();
    if (std::abs(tr - 1.0) > tol.trace) {
        std::ostringstream os;
        os << "trace is " << tr << ", expected 1";
        return os.str();
    }
    const Matrix h = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -tol.psd) {
        std::ostringstream os;
        os << "not positive semidefinite: smallest eigenvalue " << min_eig;
        return os.str();
    }
    return {};
}

inline bool is_state(const Matrix& m, const ToleranceConfig& tol = {}) {
    return state_violation(m, tol).empty();
}

class QuantumState;

namespace detail {
QuantumState make_unchecked_state(Matrix m);
}

/// A density matrix: Hermitian, unit trace, positive semidefinite.
/// Instances are immutable; every constructor path checks or enforces the invariants.
class QuantumState {
public:
    /// Validates `m` against `tol`; throws InvalidArgument naming the violated condition.
    static QuantumState from_matrix(Matrix m, const ToleranceConfig& tol = {}) {
        tol.validate();
        if (auto why = state_violation(m, tol); !why.empty()) {
            throw InvalidArgument("not a density matrix: " + why);
        }
        return QuantumState(std::move(m));
    }

    const Matrix& matrix() const noexcept { return data_; }
    Index dim() const noexcept { return data_.rows(); }
    Complex operator()(Index row, Index col) const { return data_(row, col); }

    /// Tr(rho^2), in [1/N, 1].
    double purity() const { return data_.squaredNorm(); }

private:
    explicit QuantumState(Matrix m) : data_(std::move(m)) {}
    friend QuantumState detail::make_unchecked_state(Matrix m);

    Matrix data_;
};

namespace detail {
inline QuantumState make_unchecked_state(Matrix m) { return QuantumState(std::move(m)); }

inline void check_index(Index k, Index n, const char* what) {
    if (k < 1 || k > n) {
        std::ostringstream os;
        os << what << " index " << k << " out of range [1, " << n << "]";
        throw InvalidArgument(os.str());
    }
}

/// 1 - (rho)_ff on a raw matrix, 1-based f, clamped to [0, 1].
inline double distance(const Matrix& rho, Index f) {
    const double v = 1.0 - rho(f - 1, f - 1).real();
    return std::clamp(v, 0.0, 1.0);
}
}  // namespace detail

/// Angular momentum operators for spin J in the F_z eigenbasis, ordered
/// so that F_z = diag(-J, ..., J).
struct SpinOperators {
    int twice_j = 0;
    Index dim = 0;
    Matrix f_y;  ///< tridiagonal; the integrators rely on it
    Matrix f_z;
    /// lambda_k = k - J - 1 for k = 1..N (stored 0-based).
    RealVector lambdas;

    double j() const noexcept { return 0.5 * twice_j; }
};

/// Builds F_y (tridiagonal, c_k = sqrt((N-k)k) off the diagonal) and F_z.
/// Throws InvalidArgument unless 2J is a positive integer.
inline SpinOperators make_spin_operators(double j) {
    const double twice = 2.0 * j;
    if (!std::isfinite(twice) || twice < 0.5 || std::abs(twice - std::round(twice)) > 1e-12) {
        std::ostringstream os;
        os << "angular momentum J must be a positive integer or half-integer, got " << j;
        throw InvalidArgument(os.str());
    }
    SpinOperators ops;
    ops.twice_j = static_cast<int>(std::lround(twice));
    const Index n = ops.twice_j + 1;
    ops.dim = n;
    ops.lambdas.resize(n);
    ops.f_z = Matrix::Zero(n, n);
    ops.f_y = Matrix::Zero(n, n);
    for (Index k = 1; k <= n; ++k) {
        ops.lambdas(k - 1) = static_cast<double>(k) - ops.j() - 1.0;
        ops.f_z(k - 1, k - 1) = ops.lambdas(k - 1);
    }
    // F_y = (1/2i) * M with M(k+1,k) = c_k and M(k,k+1) = -c_k.
    for (Index k = 1; k < n; ++k) {
        const double c = std::sqrt(static_cast<double>((n - k) * k));
        ops.f_y(k, k - 1) = Complex(0.0, -0.5 * c);
        ops.f_y(k - 1, k) = Complex(0.0, 0.5 * c);
    }
    return ops;
}

/// The F_z eigenprojector rho_(k) = psi_k psi_k^*, 1-based k.
inline QuantumState eigenstate(const SpinOperators& ops, Index k) {
    detail::check_index(k, ops.dim, "eigenstate");
    Matrix m = Matrix::Zero(ops.dim, ops.dim);
    m(k - 1, k - 1) = 1.0;
    return detail::make_unchecked_state(std::move(m));
}

inline QuantumState maximally_mixed(Index n) {
    if (n < 2) throw InvalidArgument("dimension must be at least 2");
    Matrix m = Matrix::Identity(n, n) / static_cast<double>(n);
    return detail::make_unchecked_state(std::move(m));
}

/// V(rho) = 1 - Tr(rho rho_(f)) = 1 - (rho)_ff, in [0, 1].
inline double distance_V(const QuantumState& rho, Index f) {
    detail::check_index(f, rho.dim(), "target");
    return detail::distance(rho.matrix(), f);
}

/// Q(rho) = Tr(rho^2) - 1/N, evaluated as |rho - I/N|_F^2 (equal for unit
/// trace) so that it vanishes exactly at the maximally mixed state.
inline double lyapunov_Q(const QuantumState& rho) {
    Matrix d = rho.matrix();
    d.diagonal().array() -= 1.0 / static_cast<double>(rho.dim());
    return d.squaredNorm();
}

/// Nearest density matrix in the spectral sense: Hermitize, clip negative
/// eigenvalues, renormalize the trace. Throws NumericalFailure if nothing
/// of positive trace survives.
inline QuantumState project_to_state_space(const Matrix& m, const ToleranceConfig& tol = {}) {
    tol.validate();
    if (m.rows() != m.cols() || m.rows() < 2) {
        throw InvalidArgument("projection needs a square matrix of dimension >= 2");
    }
    if (!m.allFinite()) throw NumericalFailure("state has non-finite entries");
    const Matrix h = 0.5 * (m + m.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix> es(h);
    if (es.info() != Eigen::Success) throw NumericalFailure("eigendecomposition failed");
    RealVector w = es.eigenvalues().cwiseMax(0.0);
    const double tr = w.sum();
    if (!(tr > 0.0) || !std::isfinite(tr)) {
        throw NumericalFailure("trace is not positive after clipping negative eigenvalues");
    }
    w /= tr;
    const Matrix& vecs = es.eigenvectors();
    Matrix out = vecs * w.asDiagonal() * vecs.adjoint();
    out = 0.5 * (out + out.adjoint()).eval();
    for (Index i = 0; i < out.rows(); ++i) out(i, i) = out(i, i).real();
    return detail::make_unchecked_state(std::move(out));
}

struct MeasurementDistribution {
    RealVector outcomes;       ///< eigenvalues a_k, ascending
    RealVector probabilities;  ///< Prob(a_k) = psi(a_k)^* rho psi(a_k)
};

/// Outcome distribution of an orthogonal measurement of a non-degenerate
/// observable. Throws Unsupported when two eigenvalues are closer than `gap_tol`.
inline MeasurementDistribution measurement_probabilities(const QuantumState& rho,
                                                         const Matrix& observable,
                                                         double gap_tol = 1e-9) {
    if (observable.rows() != rho.dim() || observable.cols() != rho.dim()) {
        throw InvalidArgument("observable dimension does not match the state");
    }
    const double scale = std::max(1.0, observable.norm());
    if ((observable - observable.adjoint()).norm() > 1e-9 * scale) {
        throw InvalidArgument("observable is not Hermitian");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(observable);
    const RealVector& a = es.eigenvalues();
    for (Index k = 1; k < a.size(); ++k) {
        if (a(k) - a(k - 1) <= gap_tol * scale) {
            throw Unsupported("observable has a degenerate spectrum");
        }
    }
    MeasurementDistribution out{a, RealVector(a.size())};
    for (Index k = 0; k < a.size(); ++k) {
        const auto psi = es.eigenvectors().col(k);
        const double p = (psi.adjoint() * rho.matrix() * psi)(0, 0).real();
        out.probabilities(k) = std::clamp(p, 0.0, 1.0);
    }
    return out;
}

/// Random density matrix G G^* / Tr(G G^*) with G complex Gaussian.
template <class Rng>
QuantumState random_state(Index n, Rng& rng) {
    if (n < 2) throw InvalidArgument("dimension must be at least 2");
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(n, n);
    for (Index c = 0; c < n; ++c)
        for (Index r = 0; r < n; ++r) g(r, c) = Complex(normal(rng), normal(rng));
    Matrix m = g * g.adjoint();
    m /= m.trace().real();
    m = 0.5 * (m + m.adjoint()).eval();
    return detail::make_unchecked_state(std::move(m));
}

/// Random pure state psi psi^* with psi uniformly distributed on the sphere.
template <class Rng>
QuantumState random_pure_state(Index n, Rng& rng) {
    if (n < 2) throw InvalidArgument("dimension must be at least 2");
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXcd psi(n);
    for (Index r = 0; r < n; ++r) psi(r) = Complex(normal(rng), normal(rng));
    psi.normalize();
    Matrix m = psi * psi.adjoint();
    return detail::make_unchecked_state(std::move(m));
}

/// The measured/controlled system in the general form: Hamiltonian H,
/// control Hamiltonian G, measurement operator c and detector efficiency eta.
struct GeneralModel {
    Matrix H;
    Matrix G;
    Matrix c;
    double eta = 1.0;

    void validate() const {
        const Index n = H.rows();
        if (n < 2 || H.cols() != n || G.rows() != n || G.cols() != n || c.rows() != n ||
            c.cols() != n) {
            throw InvalidArgument("model operators must be square with matching dimension >= 2");
        }
        if ((H - H.adjoint()).norm() > 1e-9 * std::max(1.0, H.norm()))
            throw InvalidArgument("H must be Hermitian");
        if ((G - G.adjoint()).norm() > 1e-9 * std::max(1.0, G.norm()))
            throw InvalidArgument("G must be Hermitian");
        if (!(eta > 0.0 && eta <= 1.0)) throw InvalidArgument("eta must lie in (0, 1]");
    }
};

/// H = 0, G = F_y, c = F_z: the angular momentum system after scaling alpha = beta = 1.
inline GeneralModel angular_momentum_model(const SpinOperators& ops, double eta = 1.0) {
    GeneralModel m{Matrix::Zero(ops.dim, ops.dim), ops.f_y, ops.f_z, eta};
    m.validate();
    return m;
}

}  // namespace qfb
