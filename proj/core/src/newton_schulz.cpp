#include "dualkit/newton_schulz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "dualkit/errors.hpp"
#include "dualkit/norms.hpp"

namespace dualkit {

namespace {

constexpr int kGridPoints = 10000;
constexpr double kFixedPointTol = 1e-12;
constexpr double kConvergenceTarget = 1e-6;
constexpr int kMaxApplications = 100;

double odd_poly(std::span<const double> coeffs, double x) {
    // a x + b x^3 + ... evaluated as x * horner(x^2)
    const double x2 = x * x;
    double acc = 0.0;
    for (std::size_t i = coeffs.size(); i-- > 0;) acc = acc * x2 + coeffs[i];
    return acc * x;
}

// p(A) = c0 I + c1 A + c2 A^2 + ... by Horner's rule on a square matrix.
Matrix matrix_poly(const Matrix& a, std::span<const double> coeffs) {
    const std::size_t n = a.rows();
    Matrix acc(n, n);
    for (std::size_t i = 0; i < n; ++i) acc(i, i) = coeffs.back();
    for (std::size_t idx = coeffs.size() - 1; idx-- > 0;) {
        acc = matmul(acc, a);
        for (std::size_t i = 0; i < n; ++i) acc(i, i) += coeffs[idx];
    }
    return acc;
}

double identity_residual(const Matrix& gram) {
    double acc = 0.0;
    for (std::size_t i = 0; i < gram.rows(); ++i) {
        for (std::size_t j = 0; j < gram.cols(); ++j) {
            const double d = gram(i, j) - (i == j ? 1.0 : 0.0);
            acc += d * d;
        }
    }
    return std::sqrt(acc);
}

// ||G (G - I)||_F for a Gram matrix G. Each singular direction contributes
// sigma^2 |sigma^2 - 1|, so zero directions are ignored and rank-deficient
// iterates can converge; near convergence on full-rank input this matches
// ||G - I||_F.
double active_residual(const Matrix& gram) {
    Matrix e = gram;
    for (std::size_t i = 0; i < e.rows(); ++i) e(i, i) -= 1.0;
    return frobenius_norm(matmul(gram, e));
}

double active_gram_residual(const Matrix& x) {
    const Matrix gram = x.rows() <= x.cols() ? matmul(x, transpose(x))
                                             : matmul(transpose(x), x);
    return active_residual(gram);
}

}  // namespace

CoefficientCheck validate_coefficients(std::span<const double> coeffs, double x_max) {
    if (coeffs.empty()) throw DimensionError("validate_coefficients: empty coefficient tuple");
    if (!(x_max > 0.0)) throw DimensionError("validate_coefficients: x_max must be positive");

    CoefficientCheck check;
    const double g1 = odd_poly(coeffs, 1.0);
    if (std::abs(g1 - 1.0) > kFixedPointTol) {
        // Without a fixed point at 1 no point can settle there.
        check.valid = false;
        check.violation = CoefficientCheck::Violation::NonConvergence;
        check.violating_x = 1.0;
        return check;
    }

    for (int i = 1; i <= kGridPoints; ++i) {
        const double x = x_max * static_cast<double>(i) / static_cast<double>(kGridPoints);
        const double gx = odd_poly(coeffs, x);
        if (gx <= 0.0) {
            check.valid = false;
            check.violation = CoefficientCheck::Violation::SignFlip;
            check.violating_x = x;
            return check;
        }
        if (gx > x_max) {
            check.valid = false;
            check.violation = CoefficientCheck::Violation::Overshoot;
            check.violating_x = x;
            return check;
        }
        double it = gx;
        bool reached = std::abs(it - 1.0) < kConvergenceTarget;
        for (int k = 1; k < kMaxApplications && !reached; ++k) {
            it = odd_poly(coeffs, it);
            reached = std::abs(it - 1.0) < kConvergenceTarget;
        }
        if (!reached) {
            check.valid = false;
            check.violation = CoefficientCheck::Violation::NonConvergence;
            check.violating_x = x;
            return check;
        }
    }
    return check;
}

IterationSchedule::IterationSchedule(std::vector<std::vector<double>> coefficients, int max_steps,
                                     Normalization normalization, double tolerance)
    : coefficients_(std::move(coefficients)),
      max_steps_(max_steps),
      normalization_(normalization),
      tolerance_(tolerance) {
    if (coefficients_.empty()) throw DimensionError("IterationSchedule: no coefficient tuples");
    if (max_steps_ < 1) throw DimensionError("IterationSchedule: max_steps must be at least 1");
    if (!(tolerance_ > 0.0)) throw DimensionError("IterationSchedule: tolerance must be positive");
    for (const auto& tuple : coefficients_) {
        const CoefficientCheck check = validate_coefficients(tuple, 1.0);
        if (!check.valid) {
            const char* mode = check.violation == CoefficientCheck::Violation::SignFlip ? "sign flip"
                               : check.violation == CoefficientCheck::Violation::Overshoot
                                   ? "overshoot"
                                   : "non-convergence";
            throw DimensionError("IterationSchedule: coefficient tuple fails validation (" +
                                 std::string(mode) + " at x = " + std::to_string(check.violating_x) +
                                 ")");
        }
    }
}

const IterationSchedule& IterationSchedule::standard() {
    static const IterationSchedule schedule({{1.5, -0.5}}, 30, Normalization::Frobenius, 1e-6);
    return schedule;
}

std::span<const double> IterationSchedule::coefficients_for_step(int t) const {
    const std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(t),
                                                  coefficients_.size() - 1);
    return coefficients_[idx];
}

Matrix ns_step(const Matrix& x, std::span<const double> coeffs) {
    if (coeffs.empty()) throw DimensionError("ns_step: empty coefficient tuple");
    if (!all_finite(x)) throw DimensionError("ns_step: input must be finite");
    if (x.rows() <= x.cols()) {
        const Matrix gram = matmul(x, transpose(x));
        return matmul(matrix_poly(gram, coeffs), x);
    }
    const Matrix gram = matmul(transpose(x), x);
    return matmul(x, matrix_poly(gram, coeffs));
}

double gram_residual(const Matrix& x) {
    const Matrix gram = x.rows() <= x.cols() ? matmul(x, transpose(x))
                                             : matmul(transpose(x), x);
    return identity_residual(gram);
}

std::pair<Matrix, ConvergenceReport> orthogonalize(const Matrix& g,
                                                   const IterationSchedule& schedule) {
    if (!all_finite(g)) throw DimensionError("orthogonalize: input must be finite");
    if (is_zero(g)) {
        // The duality map sends 0 to 0; nothing to iterate.
        return {g, ConvergenceReport{0, 0.0, 0.0, true}};
    }

    const double root_r = std::sqrt(static_cast<double>(std::min(g.rows(), g.cols())));
    const double tol = schedule.tolerance();

    const double initial_residual = active_gram_residual(g);
    if (initial_residual / root_r <= tol) {
        return {g, ConvergenceReport{0, initial_residual, 1.0, true}};
    }

    double c;
    if (schedule.normalization() == Normalization::Frobenius) {
        c = frobenius_norm(g);
    } else {
        // Power iteration can undershoot sigma_max; the 1.01 factor keeps
        // the start iterate's singular values at most 1.
        c = 1.01 * spectral_norm(g, 1e-8);
    }

    Matrix x = scaled(g, 1.0 / c);
    Matrix best = x;
    double best_residual = active_gram_residual(x);
    for (int t = 0; t < schedule.max_steps(); ++t) {
        x = ns_step(x, schedule.coefficients_for_step(t));
        const double residual = active_gram_residual(x);
        if (residual / root_r <= tol) {
            return {std::move(x), ConvergenceReport{t + 1, residual, c, true}};
        }
        if (residual < best_residual) {
            best_residual = residual;
            best = x;
        }
    }
    return {std::move(best),
            ConvergenceReport{schedule.max_steps(), best_residual, c, false}};
}

namespace {

// Smallest Cholesky pivot of an SPD matrix, a cheap lower bound on
// lambda_min. Returns nothing when the factorization breaks down, i.e. the
// matrix is numerically singular or indefinite.
std::optional<double> min_cholesky_pivot(const Matrix& a) {
    const std::size_t n = a.rows();
    Matrix l(n, n);
    double min_pivot = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = a(i, j);
            for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
            if (i == j) {
                if (acc <= 0.0) return std::nullopt;
                l(i, i) = std::sqrt(acc);
                min_pivot = std::min(min_pivot, acc);
            } else {
                l(i, j) = acc / l(j, j);
            }
        }
    }
    return min_pivot;
}

}  // namespace

Matrix inverse_root_dualize(const Matrix& g, int max_steps, double tol) {
    if (!all_finite(g)) throw DimensionError("inverse_root_dualize: input must be finite");
    const bool left = g.rows() <= g.cols();
    const Matrix gram = left ? matmul(g, transpose(g)) : matmul(transpose(g), g);
    const std::size_t r = gram.rows();

    // Condition estimate of the Gram matrix: lambda_max by power iteration,
    // lambda_min bounded by the smallest Cholesky pivot.
    const double lambda_max = spectral_norm(gram, 1e-10);
    if (lambda_max <= 0.0)
        throw IllConditionedError("inverse_root_dualize: zero input",
                                  std::numeric_limits<double>::infinity());
    const std::optional<double> min_pivot = min_cholesky_pivot(gram);
    const double condition = min_pivot ? lambda_max / *min_pivot
                                       : std::numeric_limits<double>::infinity();
    if (!(condition <= 1e8)) {
        throw IllConditionedError(
            "inverse_root_dualize: Gram condition estimate " + std::to_string(condition) +
                " exceeds 1e8",
            condition);
    }

    // Coupled Newton-Schulz for the inverse square root of A/s, s = trace(A):
    //   Y <- Y (3I - Z Y)/2,  Z <- (3I - Z Y)/2 Z
    // with Y -> (A/s)^{1/2} and Z -> (A/s)^{-1/2}.
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) s += gram(i, i);
    Matrix y = scaled(gram, 1.0 / s);
    Matrix z = Matrix::identity(r);
    const double root_r = std::sqrt(static_cast<double>(r));

    bool converged = false;
    int steps = 0;
    double residual = 0.0;
    for (int k = 0; k < max_steps; ++k) {
        const Matrix zy = matmul(z, y);
        residual = identity_residual(zy);
        if (residual / root_r <= tol) {
            converged = true;
            steps = k;
            break;
        }
        Matrix t(r, r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < r; ++j) t(i, j) = 0.5 * ((i == j ? 3.0 : 0.0) - zy(i, j));
        y = matmul(y, t);
        z = matmul(t, z);
    }
    if (!converged) {
        throw NonConvergenceError("inverse_root_dualize: no convergence after " +
                                      std::to_string(max_steps) + " steps",
                                  max_steps, residual);
    }
    (void)steps;
    const Matrix inv_sqrt = scaled(z, 1.0 / std::sqrt(s));
    return left ? matmul(inv_sqrt, g) : matmul(g, inv_sqrt);
}

}  // namespace dualkit
