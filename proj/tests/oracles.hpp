#pragma once

// Reference implementations used only by the tests. They follow the
// textbook formulas with dense products and share no code path with the
// library's structured kernels.

#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "qfb/quantum_core.hpp"

namespace qfb::oracle {

inline Matrix commutator(const Matrix& a, const Matrix& b) { return a * b - b * a; }

/// J_+ in the |J, m> basis ordered m = -J..J, built from the ladder-operator
/// matrix elements <m+1|J_+|m> = sqrt((J - m)(J + m + 1)).
inline Matrix raising(double j) {
    const auto n = static_cast<Index>(std::lround(2 * j + 1));
    Matrix jp = Matrix::Zero(n, n);
    for (Index k = 0; k + 1 < n; ++k) {
        const double m = -j + static_cast<double>(k);
        jp(k + 1, k) = std::sqrt((j - m) * (j + m + 1));
    }
    return jp;
}

inline Matrix spin_y(double j) {
    const Matrix jp = raising(j);
    return (jp - jp.adjoint()) / Complex(0.0, 2.0);
}

inline Matrix spin_x(double j) {
    const Matrix jp = raising(j);
    return 0.5 * (jp + jp.adjoint());
}

inline Matrix spin_z(double j) {
    const auto n = static_cast<Index>(std::lround(2 * j + 1));
    Matrix z = Matrix::Zero(n, n);
    for (Index k = 0; k < n; ++k) z(k, k) = -j + static_cast<double>(k);
    return z;
}

inline Matrix drift(const Matrix& rho, double u, const Matrix& fy, const Matrix& fz) {
    return Complex(0.0, -u) * commutator(fy, rho) - 0.5 * commutator(fz, commutator(fz, rho));
}

inline Matrix diffusion(const Matrix& rho, const Matrix& fz, double eta) {
    const Complex mean = (fz * rho).trace();
    return std::sqrt(eta) * (fz * rho + rho * fz - 2.0 * mean * rho);
}

/// -Tr(i [F_y, rho] rho_(f)) evaluated with full products; returns the complex value.
inline Complex feedback_gain(const Matrix& rho, Index f, const Matrix& fy) {
    Matrix target = Matrix::Zero(rho.rows(), rho.cols());
    target(f - 1, f - 1) = 1.0;
    return -(Complex(0.0, 1.0) * commutator(fy, rho) * target).trace();
}

/// Ensemble dynamics with constant u solved exactly: vec(rho_t) = exp(L t) vec(rho_0)
/// with column-stacking, vec(A X B) = (B^T kron A) vec(X).
inline Matrix ensemble_exact(const Matrix& rho0, double u, double t, const Matrix& fy,
                             const Matrix& fz) {
    const Index n = rho0.rows();
    const Matrix id = Matrix::Identity(n, n);
    const Matrix fz2 = fz * fz;
    const Matrix left_right_fy =
        Eigen::kroneckerProduct(id, fy).eval() - Eigen::kroneckerProduct(fy.transpose(), id).eval();
    const Matrix dephasing = Eigen::kroneckerProduct(id, fz2).eval() -
                             2.0 * Eigen::kroneckerProduct(fz.transpose(), fz).eval() +
                             Eigen::kroneckerProduct(fz2.transpose(), id).eval();
    const Matrix L = Complex(0.0, -u) * left_right_fy - 0.5 * dephasing;
    const Matrix prop = (L * t).exp();
    Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(rho0.data(), n * n);
    Eigen::VectorXcd w = prop * v;
    return Eigen::Map<const Matrix>(w.data(), n, n);
}

/// Tr(rho^2) by an explicit matrix product.
inline double purity(const Matrix& rho) { return (rho * rho).trace().real(); }

}  // namespace qfb::oracle
