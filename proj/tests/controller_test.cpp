#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "oracles.hpp"
#include "qfb/controller.hpp"

namespace qfb {
namespace {

// Pure state sqrt(V)|f-1> + sqrt(1-V)|f> with V(rho) = V; its coherence makes
// the feedback gain nonzero so the two branches are distinguishable.
QuantumState state_with_distance(double v, Index f, Index n) {
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(n);
    psi(f - 2) = std::sqrt(v);
    psi(f - 1) = std::sqrt(1.0 - v);
    Matrix m = psi * psi.adjoint();
    m(f - 1, f - 1) = 1.0 - v;
    m(f - 2, f - 2) = v;
    return QuantumState::from_matrix(m);
}

TEST(FeedbackGain, VanishesOnDiagonalStates) {
    const auto ops = make_spin_operators(1.5);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        RealVector w(4);
        for (Index k = 0; k < 4; ++k) w(k) = uni(rng);
        w /= w.sum();
        Matrix m = Matrix::Zero(4, 4);
        m.diagonal() = w.cast<Complex>();
        const auto rho = QuantumState::from_matrix(m);
        for (Index f = 1; f <= 4; ++f) EXPECT_EQ(feedback_gain(rho, f, ops), 0.0);
    }
    EXPECT_EQ(feedback_gain(eigenstate(ops, 2), 2, ops), 0.0);
}

TEST(FeedbackGain, HalfSpinCoherentState) {
    const auto ops = make_spin_operators(0.5);
    Matrix m(2, 2);
    m << 0.5, 0.5, 0.5, 0.5;
    const auto rho = QuantumState::from_matrix(m);
    // Oracle: i[F_y, rho] = diag(-1/2, 1/2) by full matrix products.
    const Matrix ic = kI * oracle::commutator(ops.f_y, m);
    EXPECT_NEAR(std::abs(ic(0, 0) - Complex(-0.5)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(ic(1, 1) - Complex(0.5)), 0.0, 1e-15);
    EXPECT_NEAR(oracle::feedback_gain(m, 2, ops.f_y).real(), -0.5, 1e-15);
    EXPECT_NEAR(feedback_gain(rho, 2, ops), -0.5, 1e-15);
}

TEST(FeedbackGain, RealAndBoundedOnRandomStates) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 400; ++i) {
        const double j = 0.5 * (1 + i % 10);
        const auto ops = make_spin_operators(j);
        const auto rho = random_state(ops.dim, rng);
        const Index f = 1 + i % ops.dim;
        const Complex ref = oracle::feedback_gain(rho.matrix(), f, ops.f_y);
        EXPECT_LT(std::abs(ref.imag()), 1e-14);
        const double u = feedback_gain(rho, f, ops);
        EXPECT_NEAR(u, ref.real(), 1e-13);
        EXPECT_LE(std::abs(u), 2.0 * ops.f_y.norm());
    }
}

TEST(NewController, GammaValidation) {
    auto ops = std::make_shared<const SpinOperators>(make_spin_operators(10.0));
    const auto rho0 = eigenstate(*ops, 1);
    const auto ok = new_controller(0.04, 11, ops, rho0);
    EXPECT_FALSE(ok.outside_guaranteed_set);
    const auto warn = new_controller(0.4, 11, ops, rho0);
    EXPECT_TRUE(warn.outside_guaranteed_set);
    EXPECT_THROW(new_controller(0.0, 11, ops, rho0), InvalidArgument);
    EXPECT_THROW(new_controller(-0.1, 11, ops, rho0), InvalidArgument);
    EXPECT_THROW(new_controller(0.04, 22, ops, rho0), InvalidArgument);
    EXPECT_TRUE(new_controller(1.0 / 21.0, 11, ops, rho0).outside_guaranteed_set);
}

TEST(NewController, InitialModeFollowsStartingRegion) {
    auto ops = std::make_shared<const SpinOperators>(make_spin_operators(1.0));
    EXPECT_EQ(new_controller(0.5, 3, ops, eigenstate(*ops, 3)).mode, ControlMode::feedback);
    EXPECT_EQ(new_controller(0.5, 3, ops, eigenstate(*ops, 1)).mode, ControlMode::constant);
    // Inside the band with no history: constant drive.
    EXPECT_EQ(new_controller(0.5, 3, ops, state_with_distance(0.6, 3, 3)).mode, ControlMode::constant);
    EXPECT_EQ(new_controller(0.5, 3, ops, state_with_distance(0.5, 3, 3)).mode, ControlMode::feedback);
}

TEST(MhControl, AtTargetAndAntipode) {
    auto ops = std::make_shared<const SpinOperators>(make_spin_operators(10.0));
    auto c = new_controller(0.04, 11, ops, eigenstate(*ops, 11));
    const auto at_target = mh_control(c, eigenstate(*ops, 11));
    EXPECT_EQ(at_target.u, 0.0);
    EXPECT_EQ(at_target.next.mode, ControlMode::feedback);
    const auto far = mh_control(c, eigenstate(*ops, 1));
    EXPECT_EQ(far.u, 1.0);
    EXPECT_EQ(far.next.mode, ControlMode::constant);
    // The input state is not modified.
    EXPECT_EQ(c.mode, ControlMode::feedback);
}

struct Step {
    double v;
    ControlMode mode;
};

// Drives the law with a scripted V sequence and checks mode and u at every step.
void run_script(double gamma, const std::vector<Step>& script) {
    const Index f = 3;
    auto ops = std::make_shared<const SpinOperators>(make_spin_operators(1.0));
    auto state = new_controller(gamma, f, ops, state_with_distance(script.front().v, f, 3));
    for (std::size_t i = 0; i < script.size(); ++i) {
        SCOPED_TRACE(i);
        const auto rho = state_with_distance(script[i].v, f, 3);
        const auto d = mh_control(state, rho);
        EXPECT_EQ(d.next.mode, script[i].mode);
        const double expected_u =
            script[i].mode == ControlMode::feedback ? oracle::feedback_gain(rho.matrix(), f, ops->f_y).real()
                                                    : 1.0;
        EXPECT_DOUBLE_EQ(d.u, expected_u);
        if (script[i].mode == ControlMode::feedback && script[i].v > 0.0 && script[i].v < 1.0) {
            EXPECT_NE(d.u, 1.0);
        }
        // Determinism: evaluating twice gives the same result.
        const auto again = mh_control(state, rho);
        EXPECT_EQ(again.u, d.u);
        EXPECT_EQ(again.next.mode, d.next.mode);
        state = d.next;
    }
}

TEST(MhControl, HysteresisScriptWithExactBoundaries) {
    using M = ControlMode;
    // gamma = 1/2: band B = (0.5, 0.75), both boundaries exact in binary.
    run_script(0.5, {{1.0, M::constant},
                     {0.6, M::constant},   // entered B from above: latched constant
                     {0.5, M::feedback},   // V = 1 - gamma closes to feedback
                     {0.3, M::feedback},
                     {0.6, M::feedback},   // entered B from below: latched feedback
                     {0.7, M::feedback},
                     {0.74, M::feedback},
                     {0.75, M::constant},  // V = 1 - gamma/2 closes to constant
                     {0.6, M::constant},
                     {0.52, M::constant},
                     {0.4, M::feedback},
                     {0.6, M::feedback},
                     {0.0, M::feedback},
                     {0.9, M::constant}});
}

TEST(MhControl, OscillationInsideBandNeverSwitches) {
    using M = ControlMode;
    const double gamma = 0.2;  // B = (0.8, 0.9)
    std::vector<Step> from_below{{0.7, M::feedback}};
    std::vector<Step> from_above{{0.95, M::constant}};
    for (int i = 0; i < 40; ++i) {
        const double v = 0.81 + 0.08 * (0.5 + 0.5 * std::sin(0.7 * i));
        from_below.push_back({v, M::feedback});
        from_above.push_back({v, M::constant});
    }
    from_below.push_back({0.91, M::constant});
    from_above.push_back({0.79, M::feedback});
    run_script(gamma, from_below);
    run_script(gamma, from_above);
}

}  // namespace
}  // namespace qfb
