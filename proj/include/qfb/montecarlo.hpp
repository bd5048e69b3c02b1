#pragma once

// Ensemble experiments over independent sample paths: convergence statistics,
// Monte Carlo mean against the ensemble ODE, exit times with the Dynkin-type
// bound E[tau] <= T0 / (1 - Pr{tau > T0}).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "qfb/dynamics.hpp"

namespace qfb {

namespace detail {
/// Runs fn(i) for i in [0, count) on up to `threads` workers (0 = hardware concurrency).
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

/// Standard error of the mean from the unbiased sample variance.
inline double std_error_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    const double n = static_cast<double>(xs.size());
    return std::sqrt(ss / (n - 1.0) / n);
}
}  // namespace detail

struct EnsembleOptions {
    Index record_stride = 1;
    double eps_conv = 0.01;
    unsigned threads = 0;
    bool keep_records = false;  ///< keep every per-trajectory record in the result
};

struct TrajectoryFailure {
    std::size_t index = 0;
    double time = std::numeric_limits<double>::quiet_NaN();
    std::string message;
};

struct EnsembleStats {
    std::vector<double> times;
    std::vector<double> mean_V;
    std::vector<double> conv_fraction;     ///< fraction with V < eps_conv at each time
    std::vector<QuantumState> mean_state;  ///< Monte Carlo estimate of E[rho_t]
    double convergence_fraction = 0.0;     ///< at the horizon
    double eps_conv = 0.01;
    std::uint64_t base_seed = 0;
    /// Noise stream of each trajectory; trajectory i uses NoiseStream(base_seed, streams[i]).
    std::vector<std::uint64_t> streams;
    std::size_t M = 0;          ///< trajectories requested
    std::size_t completed = 0;  ///< trajectories that reached the horizon
    std::vector<TrajectoryFailure> failures;
    std::vector<TrajectoryRecord> records;
};

/// Runs M independent sample paths from rho0. Trajectory i draws its noise
/// from stream i of base_seed; reduction happens in trajectory order, so the
/// result does not depend on the thread count. Failed paths are reported in
/// `failures` and excluded from the averages.
inline EnsembleStats run_ensemble(const QuantumState& rho0, const ControlPolicy& policy,
                                  double horizon, const SdeStepConfig& cfg, std::size_t M,
                                  std::uint64_t base_seed, const EnsembleOptions& opts = {}) {
    if (M < 1) throw InvalidArgument("ensemble size M must be >= 1");
    cfg.validate();
    TrajectoryOptions topts{opts.record_stride, true, opts.eps_conv};

    std::vector<std::optional<TrajectoryRecord>> results(M);
    std::vector<std::optional<TrajectoryFailure>> errors(M);
    detail::parallel_for(M, opts.threads, [&](std::size_t i) {
        try {
            results[i] = simulate_trajectory(rho0, policy, horizon, cfg, base_seed, topts, i);
        } catch (const NumericalFailure& e) {
            errors[i] = TrajectoryFailure{i, e.time(), e.what()};
        }
    });

    EnsembleStats stats;
    stats.eps_conv = opts.eps_conv;
    stats.base_seed = base_seed;
    stats.M = M;
    for (std::size_t i = 0; i < M; ++i) {
        stats.streams.push_back(i);
        if (errors[i]) stats.failures.push_back(*errors[i]);
    }

    std::vector<Matrix> sum_state;
    for (std::size_t i = 0; i < M; ++i) {
        if (!results[i]) continue;
        const TrajectoryRecord& r = *results[i];
        if (stats.completed == 0) {
            stats.times = r.times;
            stats.mean_V.assign(r.times.size(), 0.0);
            stats.conv_fraction.assign(r.times.size(), 0.0);
            sum_state.assign(r.times.size(), Matrix::Zero(rho0.dim(), rho0.dim()));
        }
        for (std::size_t k = 0; k < r.times.size(); ++k) {
            stats.mean_V[k] += r.V[k];
            stats.conv_fraction[k] += r.V[k] < opts.eps_conv ? 1.0 : 0.0;
            sum_state[k] += r.states[k].matrix();
        }
        ++stats.completed;
    }
    if (stats.completed == 0) {
        throw NumericalFailure("every trajectory of the ensemble failed: " + stats.failures.front().message,
                               stats.failures.front().time);
    }
    const double count = static_cast<double>(stats.completed);
    for (std::size_t k = 0; k < stats.times.size(); ++k) {
        stats.mean_V[k] = std::clamp(stats.mean_V[k] / count, 0.0, 1.0);
        stats.conv_fraction[k] /= count;
        stats.mean_state.push_back(project_to_state_space(sum_state[k] / count, cfg.tol));
    }
    stats.convergence_fraction = stats.conv_fraction.back();
    if (opts.keep_records) {
        for (auto& r : results)
            if (r) {
                r->states.clear();
                stats.records.push_back(std::move(*r));
            }
    }
    return stats;
}

struct ExitTimeReport {
    double gamma_a = 0.0;
    double t_cap = 0.0;
    std::size_t M = 0;
    std::vector<double> samples;  ///< exit times of the paths that exited, in trajectory order
    std::size_t censored = 0;     ///< paths still inside the region at t_cap
    bool inconclusive = false;    ///< no path exited; no mean is reported
    double mean = std::numeric_limits<double>::quiet_NaN();
    double std_error = std::numeric_limits<double>::quiet_NaN();
    double t0 = std::numeric_limits<double>::quiet_NaN();
    double p_exceed = std::numeric_limits<double>::quiet_NaN();  ///< fraction with tau > t0
    double dynkin_bound = std::numeric_limits<double>::quiet_NaN();
};

struct ExitTimeOptions {
    unsigned threads = 0;
    std::optional<double> t0;  ///< defaults to the median observed exit time
};

/// First time V(rho_t) <= 1 - gamma_a under the constant drive u = 1, for M
/// paths from rho0 with V(rho0) > 1 - gamma_a. Paths that have not exited by
/// t_cap are censored: they are left out of the mean but count towards p_exceed.
inline ExitTimeReport estimate_exit_time(double gamma_a, const QuantumState& rho0, Index target,
                                         double t_cap, const SdeStepConfig& cfg, std::size_t M,
                                         std::uint64_t base_seed,
                                         std::shared_ptr<const SpinOperators> ops,
                                         const ExitTimeOptions& opts = {}) {
    if (!(gamma_a > 0.0 && gamma_a < 1.0)) throw InvalidArgument("gamma_a must lie in (0, 1)");
    if (M < 1) throw InvalidArgument("ensemble size M must be >= 1");
    if (!ops) throw InvalidArgument("exit time needs spin operators");
    cfg.validate();
    const double threshold = 1.0 - gamma_a;
    if (!(distance_V(rho0, target) > threshold)) {
        throw InvalidArgument("initial state must satisfy V(rho0) > 1 - gamma_a");
    }
    const std::int64_t n = step_count(t_cap, cfg.dt);
    const ControlPolicy policy = ConstantControl{1.0, target, ops};

    std::vector<std::optional<double>> tau(M);
    detail::parallel_for(M, opts.threads, [&](std::size_t i) {
        TrajectoryStepper stepper(rho0, policy, cfg, NoiseStream(base_seed, i));
        for (std::int64_t k = 0; k < n; ++k) {
            stepper.step();
            if (stepper.distance() <= threshold) {
                tau[i] = stepper.time();
                return;
            }
        }
    });

    ExitTimeReport rep;
    rep.gamma_a = gamma_a;
    rep.t_cap = static_cast<double>(n) * cfg.dt;
    rep.M = M;
    for (const auto& t : tau) {
        if (t) rep.samples.push_back(*t);
        else ++rep.censored;
    }
    if (rep.samples.empty()) {
        rep.inconclusive = true;
        return rep;
    }
    rep.mean = detail::mean_of(rep.samples);
    rep.std_error = detail::std_error_of(rep.samples);
    if (opts.t0) {
        rep.t0 = *opts.t0;
    } else {
        std::vector<double> sorted = rep.samples;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t h = sorted.size() / 2;
        rep.t0 = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
    }
    std::size_t exceed = 0;
    for (const auto& t : tau)
        if (!t || *t > rep.t0) ++exceed;
    rep.p_exceed = static_cast<double>(exceed) / static_cast<double>(M);
    rep.dynkin_bound = rep.p_exceed < 1.0 ? rep.t0 / (1.0 - rep.p_exceed)
                                          : std::numeric_limits<double>::infinity();
    return rep;
}

struct MeanComparison {
    double max_deviation = 0.0;  ///< max over grid and entries of |MC mean - ODE|
    double at_time = 0.0;
};

/// Monte Carlo mean of the controlled SME under a constant drive u against
/// the ensemble ODE integrated with step dt_ode, on the SME output grid.
/// Every output time must be a multiple of dt_ode.
inline MeanComparison compare_mean_vs_ode(const QuantumState& rho0, double u, double horizon,
                                          const SdeStepConfig& cfg, std::size_t M, double dt_ode,
                                          std::uint64_t base_seed,
                                          std::shared_ptr<const SpinOperators> ops,
                                          const EnsembleOptions& opts = {}) {
    if (!ops) throw InvalidArgument("comparison needs spin operators");
    const ControlPolicy policy = ConstantControl{u, 1, ops};
    const EnsembleStats mc = run_ensemble(rho0, policy, horizon, cfg, M, base_seed, opts);
    const EnsembleTrajectory ode =
        integrate_ensemble(rho0, [u](double) { return u; }, mc.times.back(), dt_ode, *ops, 1, cfg.tol);

    MeanComparison out;
    for (std::size_t k = 0; k < mc.times.size(); ++k) {
        const double t = mc.times[k];
        const auto j = static_cast<std::size_t>(std::llround(t / dt_ode));
        if (j >= ode.times.size() || std::abs(ode.times[j] - t) > 1e-9 * std::max(1.0, t)) {
            throw InvalidArgument("output grid is not aligned with the ODE step");
        }
        const double dev = (mc.mean_state[k].matrix() - ode.states[j].matrix()).cwiseAbs().maxCoeff();
        if (dev > out.max_deviation) {
            out.max_deviation = dev;
            out.at_time = t;
        }
    }
    return out;
}

}  // namespace qfb
