#pragma once

#include <vector>

#include "dualkit/matrix.hpp"

namespace dualkit {

/// Reduced SVD with r = min(rows, cols): u is rows x r with orthonormal
/// columns, v is cols x r with orthonormal columns, sigma is non-negative
/// and sorted non-increasing. u * diag(sigma) * v^T reconstructs the input.
struct SvdResult {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;
};

/// Exact dense SVD via one-sided Jacobi sweeps, used as the ground-truth
/// reference throughout the test suites. Accuracy over speed; intended for
/// matrices up to a few hundred rows/columns. Throws NonConvergenceError if
/// the sweep budget is exhausted (does not happen for finite inputs at that
/// scale).
SvdResult svd_oracle(const Matrix& g);

/// U * V^T restricted to singular values above rank_tol * sigma_max.
/// With rank_tol = 0 every column, including basis-completed null
/// directions, contributes; a small positive rank_tol gives the polar
/// factor of the row/column space only.
Matrix polar_factor(const SvdResult& s, double rank_tol = 1e-12);

/// Sum of singular values.
double nuclear_norm(const SvdResult& s);

}  // namespace dualkit
