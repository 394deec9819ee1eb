#pragma once

#include <stdexcept>
#include <string>

namespace dualkit {

/// Shape or argument precondition violated.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Text fixture or config could not be parsed. Carries a 1-based line number
/// when the failing location is known (0 otherwise).
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, int line_number = 0)
        : std::runtime_error(format(msg, line_number)), line(line_number) {}
    int line;

private:
    static std::string format(const std::string& msg, int line_number) {
        if (line_number <= 0) return msg;
        return "line " + std::to_string(line_number) + ": " + msg;
    }
};

/// An iterative kernel exhausted its step budget above tolerance.
struct NonConvergenceError : std::runtime_error {
    NonConvergenceError(const std::string& msg, int steps_used, double final_residual)
        : std::runtime_error(msg), steps(steps_used), residual(final_residual) {}
    int steps;
    double residual;
};

/// Gram matrix condition estimate too large for an inverse-root route.
struct IllConditionedError : std::runtime_error {
    IllConditionedError(const std::string& msg, double condition_estimate)
        : std::runtime_error(msg), condition(condition_estimate) {}
    double condition;
};

/// A zero-mass subtree received a nonzero gradient; the dual scaling 1/mass
/// is undefined there and the architecture cannot control that leaf.
struct ZeroMassGradientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dualkit
