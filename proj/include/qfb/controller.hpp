#pragma once

// Switching feedback law with a hysteresis band
//   B = { rho : 1 - gamma < V(rho) < 1 - gamma/2 }.
// Below the band the law applies the gain -Tr(i[F_y, rho] rho_(f)), above it
// the constant drive u = 1; inside it the mode latched at entry is kept.

#include <memory>
#include <sstream>
#include <string_view>

#include "qfb/quantum_core.hpp"

namespace qfb {

enum class ControlMode { feedback, constant };

inline std::string_view to_string(ControlMode m) {
    return m == ControlMode::feedback ? "feedback" : "constant";
}

struct ControllerState {
    double gamma = 0.0;
    Index target = 1;  ///< 1-based index f of rho_(f)
    ControlMode mode = ControlMode::constant;
    std::shared_ptr<const SpinOperators> ops;
    /// gamma >= 1/N: accepted, but stabilization is not guaranteed.
    bool outside_guaranteed_set = false;

    double lower_boundary() const noexcept { return 1.0 - gamma; }
    double upper_boundary() const noexcept { return 1.0 - 0.5 * gamma; }
};

namespace detail {
/// -(i[F_y, rho])_ff using only row and column f of the commutator.
inline double feedback_gain(const Matrix& rho, Index f, const Matrix& f_y) {
    const Index k = f - 1;
    const Complex comm = (f_y.row(k) * rho.col(k))(0, 0) - (rho.row(k) * f_y.col(k))(0, 0);
    return -(kI * comm).real();
}

inline ControlMode next_mode(ControlMode current, double v, double gamma) {
    if (v <= 1.0 - gamma) return ControlMode::feedback;
    if (v >= 1.0 - 0.5 * gamma) return ControlMode::constant;
    return current;
}
}  // namespace detail

/// u = -Tr(i[F_y, rho] rho_(f)). Real because i[F_y, rho] is Hermitian.
inline double feedback_gain(const QuantumState& rho, Index f, const SpinOperators& ops) {
    detail::check_index(f, ops.dim, "target");
    if (rho.dim() != ops.dim) throw InvalidArgument("state dimension does not match operators");
    return detail::feedback_gain(rho.matrix(), f, ops.f_y);
}

/// Initial mode is FEEDBACK iff V(rho0) <= 1 - gamma. A state starting inside
/// the band has no entry history and gets the constant drive.
inline ControllerState new_controller(double gamma, Index f,
                                      std::shared_ptr<const SpinOperators> ops,
                                      const QuantumState& initial_rho) {
    if (!ops) throw InvalidArgument("controller needs spin operators");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
        std::ostringstream os;
        os << "switching parameter gamma must be > 0, got " << gamma;
        throw InvalidArgument(os.str());
    }
    detail::check_index(f, ops->dim, "target");
    if (initial_rho.dim() != ops->dim) {
        throw InvalidArgument("initial state dimension does not match operators");
    }
    ControllerState s;
    s.gamma = gamma;
    s.target = f;
    s.outside_guaranteed_set = gamma >= 1.0 / static_cast<double>(ops->dim);
    s.mode = distance_V(initial_rho, f) <= s.lower_boundary() ? ControlMode::feedback
                                                              : ControlMode::constant;
    s.ops = std::move(ops);
    return s;
}

inline ControllerState new_controller(double gamma, Index f, const SpinOperators& ops,
                                      const QuantumState& initial_rho) {
    return new_controller(gamma, f, std::make_shared<const SpinOperators>(ops), initial_rho);
}

struct ControlDecision {
    double u = 0.0;
    ControllerState next;
};

namespace detail {
inline double apply_control(ControllerState& state, const Matrix& rho) {
    state.mode = next_mode(state.mode, distance(rho, state.target), state.gamma);
    return state.mode == ControlMode::feedback ? feedback_gain(rho, state.target, state.ops->f_y)
                                               : 1.0;
}
}  // namespace detail

/// One evaluation of the switching law. Pure: the returned state carries the updated mode.
inline ControlDecision mh_control(const ControllerState& state, const QuantumState& rho) {
    if (!state.ops || rho.dim() != state.ops->dim) {
        throw InvalidArgument("state dimension does not match controller");
    }
    ControlDecision d{0.0, state};
    d.u = detail::apply_control(d.next, rho.matrix());
    return d;
}

}  // namespace qfb
