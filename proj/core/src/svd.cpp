#include "dualkit/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dualkit/errors.hpp"

namespace dualkit {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kPairTol = 1e-14;  // off-diagonal ratio below which a pair counts as orthogonal

double col_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// Orthonormal completion: append unit columns orthogonal to cols[0..filled).
// Candidates are standard basis vectors, re-orthogonalized twice.
void complete_basis(std::vector<std::vector<double>>& cols, std::size_t filled, std::size_t m) {
    std::size_t candidate = 0;
    for (std::size_t j = filled; j < cols.size(); ++j) {
        while (true) {
            if (candidate >= m)
                throw NonConvergenceError("svd_oracle: basis completion failed", 0, 0.0);
            std::vector<double> e(m, 0.0);
            e[candidate++] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t i = 0; i < j; ++i) {
                    const double proj = col_dot(e, cols[i]);
                    for (std::size_t t = 0; t < m; ++t) e[t] -= proj * cols[i][t];
                }
            }
            const double n = l2_norm(e);
            if (n > 0.5) {
                for (double& x : e) x /= n;
                cols[j] = std::move(e);
                break;
            }
        }
    }
}

}  // namespace

SvdResult svd_oracle(const Matrix& g) {
    if (!all_finite(g)) throw DimensionError("svd_oracle: input must be finite");
    if (g.rows() < g.cols()) {
        SvdResult t = svd_oracle(transpose(g));
        return SvdResult{std::move(t.v), std::move(t.sigma), std::move(t.u)};
    }

    const std::size_t m = g.rows();
    const std::size_t n = g.cols();

    // Working copy in column vectors; rotations act on column pairs.
    std::vector<std::vector<double>> b(n, std::vector<double>(m));
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < m; ++i) b[j][i] = g(i, j);

    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;

    bool converged = (n == 1);
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = col_dot(b[p], b[p]);
                const double beta = col_dot(b[q], b[q]);
                const double gamma = col_dot(b[p], b[q]);
                if (gamma == 0.0) continue;
                if (std::abs(gamma) <= kPairTol * std::sqrt(alpha * beta)) continue;
                converged = false;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t i = 0; i < m; ++i) {
                    const double bp = b[p][i], bq = b[q][i];
                    b[p][i] = c * bp - s * bq;
                    b[q][i] = s * bp + c * bq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v[p][i], vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged)
        throw NonConvergenceError("svd_oracle: Jacobi sweeps did not converge", kMaxSweeps, 0.0);

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) sigma[j] = l2_norm(b[j]);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t c) { return sigma[a] > sigma[c]; });

    const double sigma_max = sigma[order[0]];
    const double drop = sigma_max * static_cast<double>(m) * 1e-15;

    SvdResult out;
    out.sigma.resize(n);
    out.u = Matrix(m, n);
    out.v = Matrix(n, n);

    std::vector<std::vector<double>> u_cols(n);
    std::size_t filled = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.sigma[j] = sigma[src];
        for (std::size_t i = 0; i < n; ++i) out.v(i, j) = v[src][i];
        if (sigma[src] > drop && sigma[src] > 0.0) {
            std::vector<double> u(m);
            for (std::size_t i = 0; i < m; ++i) u[i] = b[src][i] / sigma[src];
            u_cols[j] = std::move(u);
            filled = j + 1;
        }
    }
    // Left singular vectors for (numerically) zero singular values are not
    // determined by the data; fill with an orthonormal completion so U keeps
    // orthonormal columns. Sorting puts those columns in a suffix.
    if (filled < n) {
        for (std::size_t j = filled; j < n; ++j) u_cols[j].assign(m, 0.0);
        complete_basis(u_cols, filled, m);
    }
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < m; ++i) out.u(i, j) = u_cols[j][i];

    return out;
}

Matrix polar_factor(const SvdResult& s, double rank_tol) {
    const std::size_t m = s.u.rows();
    const std::size_t n = s.v.rows();
    const std::size_t r = s.sigma.size();
    const double cutoff = s.sigma.empty() ? 0.0 : s.sigma[0] * rank_tol;
    Matrix out(m, n);
    for (std::size_t k = 0; k < r; ++k) {
        if (s.sigma[k] <= cutoff) continue;
        for (std::size_t i = 0; i < m; ++i) {
            const double uik = s.u(i, k);
            if (uik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out(i, j) += uik * s.v(j, k);
        }
    }
    return out;
}

double nuclear_norm(const SvdResult& s) {
    double acc = 0.0;
    for (double x : s.sigma) acc += x;
    return acc;
}

}  // namespace dualkit
