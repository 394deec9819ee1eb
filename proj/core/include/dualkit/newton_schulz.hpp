#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dualkit/matrix.hpp"

namespace dualkit {

enum class Normalization { SpectralEstimate, Frobenius };

/// Outcome of one orthogonalization run. The residual is the rank-aware
/// Frobenius residual ||Gram (Gram - I)||_F on the short-side Gram matrix:
/// it matches ||X^T X - I||_F near convergence for full-rank iterates, and
/// zero singular directions contribute nothing, so low-rank inputs converge
/// too.
struct ConvergenceReport {
    int steps = 0;
    double residual = 0.0;
    double normalization = 1.0;  // constant the input was divided by
    bool converged = true;
};

/// validate_coefficients outcome. On rejection carries the first violating
/// grid point and the failure mode.
struct CoefficientCheck {
    enum class Violation { None, SignFlip, Overshoot, NonConvergence };
    bool valid = true;
    Violation violation = Violation::None;
    double violating_x = 0.0;
};

/// Checks that the odd polynomial g(x) = a x + b x^3 + ... is a usable
/// sign-function approximation on (0, x_max]: on a dense grid of 1e4 points
/// the polynomial must map into (0, x_max], fix 1 to within 1e-12, and
/// iterate every grid point to within 1e-6 of 1 in at most 100 applications.
CoefficientCheck validate_coefficients(std::span<const double> coeffs, double x_max);

/// Coefficients, step budget, normalization mode and stopping tolerance for
/// an orthogonalization run. Every coefficient tuple must pass
/// validate_coefficients on (0, 1]; both normalization modes guarantee the
/// start iterate has singular values at most 1.
///
/// With a single tuple the same polynomial is applied every step; with
/// several, tuple t is used at step t and the last tuple repeats once the
/// list is exhausted.
class IterationSchedule {
public:
    IterationSchedule(std::vector<std::vector<double>> coefficients, int max_steps,
                      Normalization normalization, double tolerance);

    /// The canonical cubic: coefficients (3/2, -1/2), Frobenius
    /// normalization, 30 steps, tolerance 1e-6.
    static const IterationSchedule& standard();

    std::span<const double> coefficients_for_step(int t) const;
    const std::vector<std::vector<double>>& coefficients() const { return coefficients_; }
    int max_steps() const { return max_steps_; }
    Normalization normalization() const { return normalization_; }
    double tolerance() const { return tolerance_; }

private:
    std::vector<std::vector<double>> coefficients_;
    int max_steps_;
    Normalization normalization_;
    double tolerance_;
};

/// One polynomial iteration X -> a X + b (X X^T) X + c (X X^T)^2 X + ...,
/// evaluated on whichever Gram side is smaller. Applies the odd polynomial
/// a x + b x^3 + ... to every singular value of x.
Matrix ns_step(const Matrix& x, std::span<const double> coeffs);

/// Drives all nonzero singular values of g to 1, converging to the polar
/// factor U V^T of the reduced SVD. A zero input returns zero. Inputs that
/// already meet the tolerance are returned unchanged with zero steps.
/// On step-budget exhaustion the best iterate is returned with
/// report.converged = false; never throws for that case.
std::pair<Matrix, ConvergenceReport> orthogonalize(const Matrix& g,
                                                   const IterationSchedule& schedule);

/// Polar factor via the inverse-root route (G G^T)^{-1/2} G, using a coupled
/// Newton-Schulz iteration for the inverse square root of the smaller-side
/// Gram matrix with trace scaling for the initial iterate. Requires a
/// well-conditioned full-rank input: throws IllConditionedError when the
/// Gram condition estimate exceeds 1e8, and NonConvergenceError if the step
/// budget runs out.
Matrix inverse_root_dualize(const Matrix& g, int max_steps = 60, double tol = 1e-11);

/// ||X^T X - I||_F computed on the smaller Gram side.
double gram_residual(const Matrix& x);

}  // namespace dualkit
