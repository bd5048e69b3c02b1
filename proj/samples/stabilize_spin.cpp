// Stabilizes the J = 1 system around rho_(3) from rho_(1) and prints V(rho_t)
// once per time unit.

#include <cstdio>

#include "qfb/dynamics.hpp"

int main() {
    auto ops = std::make_shared<const qfb::SpinOperators>(qfb::make_spin_operators(1.0));
    const auto rho0 = qfb::eigenstate(*ops, 1);
    const auto controller = qfb::new_controller(0.1, 3, ops, rho0);

    qfb::SdeStepConfig cfg;
    qfb::TrajectoryOptions opts;
    opts.record_stride = 1000;
    const auto rec = qfb::simulate_trajectory(rho0, controller, 20.0, cfg, 1, opts);
    for (std::size_t k = 0; k < rec.times.size(); ++k)
        std::printf("t = %5.1f  V = %.3e  u = %+.3f  (%s)\n", rec.times[k], rec.V[k], rec.u[k],
                    std::string(qfb::to_string(rec.mode[k])).c_str());
    return rec.converged ? 0 : 1;
}
