#pragma once

// Controlled stochastic master equation (alpha = beta = 1):
//   d rho = -i u [F_y, rho] dt - 1/2 [F_z, [F_z, rho]] dt
//           + sqrt(eta) (F_z rho + rho F_z - 2 Tr(F_z rho) rho) dW
// integrated with Euler-Maruyama plus projection back onto the state space,
// and the ensemble-averaged ODE obtained by dropping the dW term (RK4).

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <variant>
#include <vector>

#include "qfb/controller.hpp"
#include "qfb/quantum_core.hpp"

namespace qfb {

struct SdeStepConfig {
    double dt = 1e-3;
    double eta = 1.0;
    int projection_every = 1;
    ToleranceConfig tol{};

    void validate() const {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("dt must be > 0");
        if (!(eta > 0.0 && eta <= 1.0)) throw InvalidArgument("eta must lie in (0, 1]");
        if (projection_every < 1) throw InvalidArgument("projection_every must be >= 1");
        tol.validate();
    }
};

namespace detail {
/// [F_y, rho] using the tridiagonal structure of F_y.
inline Matrix fy_commutator(const Matrix& rho, const Matrix& f_y) {
    const Index n = rho.rows();
    Matrix out(n, n);
    for (Index m = 0; m < n; ++m)
        for (Index l = 0; l < n; ++l) {
            Complex s{0.0, 0.0};
            if (l > 0) s += f_y(l, l - 1) * rho(l - 1, m);
            if (l + 1 < n) s += f_y(l, l + 1) * rho(l + 1, m);
            if (m > 0) s -= rho(l, m - 1) * f_y(m - 1, m);
            if (m + 1 < n) s -= rho(l, m + 1) * f_y(m + 1, m);
            out(l, m) = s;
        }
    return out;
}

inline Matrix drift(const Matrix& rho, double u, const SpinOperators& ops) {
    const Index n = rho.rows();
    // [F_z, [F_z, rho]]_lm = (lambda_l - lambda_m)^2 rho_lm since F_z is diagonal.
    Matrix out(n, n);
    for (Index m = 0; m < n; ++m)
        for (Index l = 0; l < n; ++l) {
            const double d = ops.lambdas(l) - ops.lambdas(m);
            out(l, m) = -0.5 * d * d * rho(l, m);
        }
    if (u != 0.0) out.noalias() += (-kI * u) * fy_commutator(rho, ops.f_y);
    return out;
}

inline Matrix diffusion(const Matrix& rho, const SpinOperators& ops, double eta) {
    const Index n = rho.rows();
    const double mean_fz = (ops.lambdas.array() * rho.diagonal().real().array()).sum();
    const double s = std::sqrt(eta);
    Matrix out(n, n);
    for (Index m = 0; m < n; ++m)
        for (Index l = 0; l < n; ++l)
            out(l, m) = s * (ops.lambdas(l) + ops.lambdas(m) - 2.0 * mean_fz) * rho(l, m);
    return out;
}

inline void check_dims(const QuantumState& rho, const SpinOperators& ops) {
    if (rho.dim() != ops.dim) throw InvalidArgument("state dimension does not match operators");
}
}  // namespace detail

/// Deterministic part of the master equation. Traceless and Hermitian.
inline Matrix sme_drift(const QuantumState& rho, double u, const SpinOperators& ops) {
    detail::check_dims(rho, ops);
    return detail::drift(rho.matrix(), u, ops);
}

/// Coefficient of dW, including the sqrt(eta) factor. Vanishes at every eigenstate of F_z.
inline Matrix sme_diffusion(const QuantumState& rho, const SpinOperators& ops, double eta) {
    detail::check_dims(rho, ops);
    if (!(eta > 0.0 && eta <= 1.0)) throw InvalidArgument("eta must lie in (0, 1]");
    return detail::diffusion(rho.matrix(), ops, eta);
}

/// Right-hand side of the ensemble dynamics d rho_bar / dt; same expression as sme_drift.
inline Matrix ensemble_rhs(const QuantumState& rho_bar, double u, const SpinOperators& ops) {
    return sme_drift(rho_bar, u, ops);
}

/// dQ/dt along the ensemble dynamics: -|[F_z, rho_bar]|_F^2.
inline double lyapunov_derivative(const QuantumState& rho_bar, const SpinOperators& ops) {
    detail::check_dims(rho_bar, ops);
    double s = 0.0;
    const Matrix& r = rho_bar.matrix();
    for (Index m = 0; m < ops.dim; ++m)
        for (Index l = 0; l < ops.dim; ++l) {
            const double d = ops.lambdas(l) - ops.lambdas(m);
            s += d * d * std::norm(r(l, m));
        }
    return -s;
}

/// Drift of the general equation with Hamiltonian H, control G and measurement c.
inline Matrix general_drift(const GeneralModel& model, const QuantumState& rho, double u) {
    const Matrix& r = rho.matrix();
    const Matrix& c = model.c;
    const Matrix cdc = c.adjoint() * c;
    return -kI * (model.H * r - r * model.H) - kI * u * (model.G * r - r * model.G) +
           c * r * c.adjoint() - 0.5 * (cdc * r + r * cdc);
}

inline Matrix general_diffusion(const GeneralModel& model, const QuantumState& rho) {
    const Matrix& r = rho.matrix();
    const Matrix& c = model.c;
    const Complex mean = ((c + c.adjoint()) * r).trace();
    return std::sqrt(model.eta) * (c * r + r * c.adjoint() - mean * r);
}

/// One Euler-Maruyama step followed by projection onto the state space.
/// `dw` is the Wiener increment over `cfg.dt` (variance dt), supplied by the caller.
inline QuantumState em_step(const QuantumState& rho, double u, const SdeStepConfig& cfg, double dw,
                            const SpinOperators& ops) {
    detail::check_dims(rho, ops);
    const Matrix& r = rho.matrix();
    Matrix next = r + detail::drift(r, u, ops) * cfg.dt + detail::diffusion(r, ops, cfg.eta) * dw;
    return project_to_state_space(next, cfg.tol);
}

/// Gaussian Wiener increments for trajectory `stream` of an experiment seeded
/// with `seed`. Each (seed, stream) pair owns an independent engine, so results
/// do not depend on how trajectories are scheduled across threads.
class NoiseStream {
public:
    NoiseStream(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream),
                          static_cast<std::uint32_t>(stream >> 32), 0x71fb5eedu};
        engine_.seed(seq);
    }

    double increment(double dt) { return std::sqrt(dt) * normal_(engine_); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

/// State-independent drive u; `target` only selects which V(rho) is reported.
struct ConstantControl {
    double u = 1.0;
    Index target = 1;
    std::shared_ptr<const SpinOperators> ops;
};

using ControlPolicy = std::variant<ControllerState, ConstantControl>;

inline const std::shared_ptr<const SpinOperators>& policy_ops(const ControlPolicy& p) {
    return std::visit([](const auto& c) -> const std::shared_ptr<const SpinOperators>& { return c.ops; },
                      p);
}

inline Index policy_target(const ControlPolicy& p) {
    return std::visit([](const auto& c) { return c.target; }, p);
}

struct TrajectoryOptions {
    Index record_stride = 1;   ///< record every k-th integration step (plus the last)
    bool keep_states = false;  ///< store full rho_t snapshots
    double eps_conv = 0.01;    ///< convergence threshold on V
};

struct TrajectoryRecord {
    std::vector<double> times;
    std::vector<double> V;
    std::vector<double> u;
    std::vector<double> purity;
    std::vector<ControlMode> mode;
    std::vector<QuantumState> states;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    double eps_conv = 0.01;
    bool converged = false;  ///< V < eps_conv at the horizon
    std::optional<double> first_converged_time;
};

/// Integrates one sample path step by step. Used directly when a run must stop
/// on an event (exit times); simulate_trajectory wraps it for fixed horizons.
class TrajectoryStepper {
public:
    TrajectoryStepper(const QuantumState& rho0, ControlPolicy policy, const SdeStepConfig& cfg,
                      NoiseStream noise)
        : rho_(rho0.matrix()), policy_(std::move(policy)), cfg_(cfg), noise_(std::move(noise)) {
        cfg_.validate();
        ops_ = policy_ops(policy_);
        if (!ops_) throw InvalidArgument("control policy has no spin operators");
        if (rho0.dim() != ops_->dim) throw InvalidArgument("state dimension does not match operators");
        detail::check_index(policy_target(policy_), ops_->dim, "target");
    }

    /// Control value for the current state; updates the hysteresis mode. Idempotent.
    double control() {
        if (auto* c = std::get_if<ConstantControl>(&policy_)) return c->u;
        return detail::apply_control(std::get<ControllerState>(policy_), rho_);
    }

    ControlMode mode() const {
        if (const auto* c = std::get_if<ControllerState>(&policy_)) return c->mode;
        return ControlMode::constant;
    }

    /// Advances by dt under the sample-and-hold control evaluated at the current state.
    double step() {
        const double u = control();
        const double dw = noise_.increment(cfg_.dt);
        Matrix next = rho_ + detail::drift(rho_, u, *ops_) * cfg_.dt +
                      detail::diffusion(rho_, *ops_, cfg_.eta) * dw;
        ++steps_;
        try {
            if (steps_ % cfg_.projection_every == 0) {
                rho_ = project_to_state_space(next, cfg_.tol).matrix();
            } else {
                if (!next.allFinite()) throw NumericalFailure("state has non-finite entries");
                next = 0.5 * (next + next.adjoint()).eval();
                rho_ = next / next.trace().real();
            }
        } catch (const NumericalFailure& e) {
            throw NumericalFailure(e.what(), time());
        }
        return u;
    }

    double time() const noexcept { return static_cast<double>(steps_) * cfg_.dt; }
    std::int64_t steps() const noexcept { return steps_; }
    double distance() const { return detail::distance(rho_, policy_target(policy_)); }
    double purity() const { return rho_.squaredNorm(); }
    const Matrix& matrix() const noexcept { return rho_; }

    /// Current state; re-projected if the last step skipped projection.
    QuantumState state() const {
        if (steps_ % cfg_.projection_every == 0) return detail::make_unchecked_state(rho_);
        return project_to_state_space(rho_, cfg_.tol);
    }

private:
    Matrix rho_;
    ControlPolicy policy_;
    SdeStepConfig cfg_;
    NoiseStream noise_;
    std::shared_ptr<const SpinOperators> ops_;
    std::int64_t steps_ = 0;
};

inline std::int64_t step_count(double horizon, double dt) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidArgument("horizon T must be > 0");
    return static_cast<std::int64_t>(std::ceil(horizon / dt - 1e-9));
}

/// Simulates one sample path on [0, T]; a pure function of its arguments.
/// The noise stream is (seed, stream); ensembles use one stream per trajectory.
inline TrajectoryRecord simulate_trajectory(const QuantumState& rho0, const ControlPolicy& policy,
                                            double horizon, const SdeStepConfig& cfg,
                                            std::uint64_t seed, const TrajectoryOptions& opts = {},
                                            std::uint64_t stream = 0) {
    cfg.validate();
    if (opts.record_stride < 1) throw InvalidArgument("record stride must be >= 1");
    const std::int64_t n = step_count(horizon, cfg.dt);
    TrajectoryStepper stepper(rho0, policy, cfg, NoiseStream(seed, stream));

    TrajectoryRecord rec;
    rec.seed = seed;
    rec.stream = stream;
    rec.eps_conv = opts.eps_conv;
    const auto expected = static_cast<std::size_t>(n / opts.record_stride + 2);
    rec.times.reserve(expected);
    rec.V.reserve(expected);
    rec.u.reserve(expected);
    rec.purity.reserve(expected);
    rec.mode.reserve(expected);

    auto record = [&] {
        const double u = stepper.control();
        const double v = stepper.distance();
        rec.times.push_back(stepper.time());
        rec.V.push_back(v);
        rec.u.push_back(u);
        rec.purity.push_back(stepper.purity());
        rec.mode.push_back(stepper.mode());
        if (opts.keep_states) rec.states.push_back(stepper.state());
        if (v < opts.eps_conv && !rec.first_converged_time) rec.first_converged_time = stepper.time();
    };

    record();
    for (std::int64_t k = 1; k <= n; ++k) {
        stepper.step();
        if (k % opts.record_stride == 0 || k == n) record();
    }
    rec.converged = rec.V.back() < opts.eps_conv;
    return rec;
}

struct EnsembleTrajectory {
    std::vector<double> times;
    std::vector<QuantumState> states;
};

/// Classical RK4 on the ensemble dynamics with a time-dependent drive u(t);
/// every step is re-projected onto the state space.
inline EnsembleTrajectory integrate_ensemble(const QuantumState& rho0,
                                             const std::function<double(double)>& u_of_t,
                                             double horizon, double dt_ode, const SpinOperators& ops,
                                             Index record_stride = 1,
                                             const ToleranceConfig& tol = {}) {
    detail::check_dims(rho0, ops);
    if (!(dt_ode > 0.0)) throw InvalidArgument("ODE step must be > 0");
    if (record_stride < 1) throw InvalidArgument("record stride must be >= 1");
    if (!u_of_t) throw InvalidArgument("control function is empty");
    const std::int64_t n = step_count(horizon, dt_ode);

    EnsembleTrajectory out;
    out.times.push_back(0.0);
    out.states.push_back(rho0);
    Matrix r = rho0.matrix();
    const double h = dt_ode;
    for (std::int64_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * h;
        const double u0 = u_of_t(t);
        const double um = u_of_t(t + 0.5 * h);
        const double u1 = u_of_t(t + h);
        const Matrix k1 = detail::drift(r, u0, ops);
        const Matrix k2 = detail::drift(r + 0.5 * h * k1, um, ops);
        const Matrix k3 = detail::drift(r + 0.5 * h * k2, um, ops);
        const Matrix k4 = detail::drift(r + h * k3, u1, ops);
        Matrix next = r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        QuantumState s = project_to_state_space(next, tol);
        r = s.matrix();
        if ((k + 1) % record_stride == 0 || k + 1 == n) {
            out.times.push_back(static_cast<double>(k + 1) * h);
            out.states.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace qfb
