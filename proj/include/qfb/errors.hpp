#pragma once

#include <limits>
#include <stdexcept>
#include <string>

namespace qfb {

/// A precondition on an argument was violated.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The requested operation is not supported for this input (e.g. degenerate observables).
class Unsupported : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Integration left the state space in a way projection cannot repair.
class NumericalFailure : public std::runtime_error {
public:
    explicit NumericalFailure(const std::string& what,
                              double time = std::numeric_limits<double>::quiet_NaN())
        : std::runtime_error(what), time_(time) {}

    /// Simulated time at which the failure happened, NaN if unknown.
    double time() const noexcept { return time_; }

private:
    double time_;
};

}  // namespace qfb
