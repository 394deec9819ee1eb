#include "dualkit/norms.hpp"

#include <cmath>
#include <random>

#include "dualkit/errors.hpp"

namespace dualkit {

double rms_norm(std::span<const double> v) {
    if (v.empty()) throw DimensionError("rms_norm: empty vector");
    return l2_norm(v) / std::sqrt(static_cast<double>(v.size()));
}

namespace {

// One power-iteration run from a given start vector. Iterates v <- G^T G v
// and returns the Rayleigh-quotient estimate ||G v|| at the last unit v.
double power_iterate(const Matrix& g, std::vector<double> v, double tol, int max_iters) {
    const double vn = l2_norm(v);
    if (vn == 0.0) return 0.0;
    for (double& x : v) x /= vn;

    double estimate = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        std::vector<double> w = matvec(g, v);
        const double wn = l2_norm(w);
        if (wn == 0.0) return 0.0;  // v fell in the null space
        const double prev = estimate;
        estimate = wn;
        v = matvec_transposed(g, w);
        const double nn = l2_norm(v);
        if (nn == 0.0) break;
        for (double& x : v) x /= nn;
        if (it > 0 && std::abs(estimate - prev) <= tol * estimate) break;
    }
    return estimate;
}

}  // namespace

double spectral_norm(const Matrix& g, double tol, int max_iters) {
    if (is_zero(g)) return 0.0;
    // Iterate on the orientation with the smaller Gram side.
    const Matrix& m = g;
    const bool wide = g.cols() > g.rows();
    const Matrix mt = wide ? transpose(g) : Matrix();
    const Matrix& work = wide ? mt : m;

    std::vector<double> ones(work.cols(), 1.0);
    double best = power_iterate(work, std::move(ones), tol, max_iters);

    std::mt19937_64 rng(0x5eed5eedULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> random_start(work.cols());
    for (double& x : random_start) x = gauss(rng);
    best = std::max(best, power_iterate(work, std::move(random_start), tol, max_iters));
    return best;
}

double op_norm_rms_rms(const Matrix& w) {
    const double ratio = static_cast<double>(w.cols()) / static_cast<double>(w.rows());
    return std::sqrt(ratio) * spectral_norm(w);
}

double op_norm_l1_rms(const Matrix& w) {
    double best = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) acc += w(i, j) * w(i, j);
        best = std::max(best, std::sqrt(acc / static_cast<double>(w.rows())));
    }
    return best;
}

double spatial_max_rms(const Tensor3& x) {
    double best = 0.0;
    for (std::size_t u = 0; u < x.width(); ++u) {
        for (std::size_t v = 0; v < x.height(); ++v) {
            double acc = 0.0;
            for (std::size_t m = 0; m < x.channels(); ++m) acc += x(u, v, m) * x(u, v, m);
            best = std::max(best, std::sqrt(acc / static_cast<double>(x.channels())));
        }
    }
    return best;
}

}  // namespace dualkit
