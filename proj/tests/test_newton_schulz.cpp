#include <doctest.h>

#include <cmath>
#include <random>

#include "dualkit/checks.hpp"
#include "dualkit/errors.hpp"
#include "dualkit/newton_schulz.hpp"
#include "dualkit/svd.hpp"

using namespace dualkit;

namespace {

const std::vector<double> kCubic{1.5, -0.5};

double poly(const std::vector<double>& coeffs, double x) {
    double acc = 0.0;
    double p = x;
    for (double c : coeffs) {
        acc += c * p;
        p *= x * x;
    }
    return acc;
}

}  // namespace

TEST_CASE("ns_step fixes orthonormal matrices") {
    std::mt19937_64 rng(3);
    const Matrix q = random_orthonormal(8, 3, rng);
    const Matrix stepped = ns_step(q, kCubic);
    CHECK(frobenius_norm(subtract(stepped, q)) <= 1e-12);
}

TEST_CASE("ns_step on a scaled identity applies the scalar cubic") {
    const Matrix x = scaled(Matrix::identity(2), 0.5);
    const Matrix stepped = ns_step(x, kCubic);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(stepped(i, j) == doctest::Approx(i == j ? 0.6875 : 0.0).epsilon(1e-15));
}

TEST_CASE("ns_step transports singular values through the polynomial") {
    std::mt19937_64 rng(5);
    for (const auto& coeffs : {std::vector<double>{1.5, -0.5}, {1.2, -0.3, 0.05}}) {
        const Matrix x = scaled(random_gaussian(6, 4, rng), 0.2);
        const std::vector<double> before = svd_oracle(x).sigma;
        const std::vector<double> after = svd_oracle(ns_step(x, coeffs)).sigma;
        std::vector<double> mapped;
        for (double s : before) mapped.push_back(std::abs(poly(coeffs, s)));
        std::sort(mapped.begin(), mapped.end(), std::greater<double>());
        REQUIRE(after.size() == mapped.size());
        for (std::size_t i = 0; i < after.size(); ++i)
            CHECK(after[i] == doctest::Approx(mapped[i]).epsilon(1e-9));
    }
}

TEST_CASE("ns_step agrees across both Gram orientations") {
    std::mt19937_64 rng(7);
    const Matrix tall = scaled(random_gaussian(7, 3, rng), 0.3);
    const Matrix wide = transpose(tall);
    const Matrix a = ns_step(tall, kCubic);
    const Matrix b = transpose(ns_step(wide, kCubic));
    CHECK(frobenius_norm(subtract(a, b)) <= 1e-12);
}

TEST_CASE("validate_coefficients accepts the cubic inside its basin") {
    const CoefficientCheck check = validate_coefficients(kCubic, std::sqrt(3.0) - 1e-6);
    CHECK(check.valid);
}

TEST_CASE("validate_coefficients rejects the identity polynomial") {
    const CoefficientCheck check = validate_coefficients(std::vector<double>{1.0}, 1.0);
    CHECK_FALSE(check.valid);
    CHECK(check.violation == CoefficientCheck::Violation::NonConvergence);
    CHECK(check.violating_x == doctest::Approx(1e-4).epsilon(1e-9));
}

TEST_CASE("validate_coefficients flags the sign flip past sqrt(3)") {
    const CoefficientCheck check = validate_coefficients(kCubic, 2.0);
    CHECK_FALSE(check.valid);
    CHECK(check.violation == CoefficientCheck::Violation::SignFlip);
    CHECK(check.violating_x > std::sqrt(3.0));
    CHECK(check.violating_x < std::sqrt(3.0) + 1e-3);
}

TEST_CASE("schedule construction rejects invalid tuples") {
    CHECK_THROWS_AS(IterationSchedule({{1.0}}, 10, Normalization::Frobenius, 1e-6),
                    DimensionError);
    CHECK_THROWS_AS(IterationSchedule({{1.5, -0.5}}, 0, Normalization::Frobenius, 1e-6),
                    DimensionError);
    CHECK_THROWS_AS(IterationSchedule({{1.5, -0.5}}, 10, Normalization::Frobenius, 0.0),
                    DimensionError);
}

TEST_CASE("orthogonalize drives a scaled identity to the identity") {
    auto [x, report] = orthogonalize(scaled(Matrix::identity(3), 0.5),
                                     IterationSchedule::standard());
    CHECK(report.converged);
    CHECK(frobenius_norm(subtract(x, Matrix::identity(3))) <= 1e-6);
}

TEST_CASE("orthogonalize returns zero for zero and is a no-op on orthonormal input") {
    auto [z, zreport] = orthogonalize(Matrix(4, 2), IterationSchedule::standard());
    CHECK(is_zero(z));
    CHECK(zreport.converged);
    CHECK(zreport.steps == 0);

    std::mt19937_64 rng(11);
    const Matrix q = random_orthonormal(8, 3, rng);
    auto [x, report] = orthogonalize(q, IterationSchedule::standard());
    CHECK(report.steps == 0);
    CHECK(x == q);
}

TEST_CASE("orthogonalize matches the oracle polar factor") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix g = random_conditioned(8, 4, 100.0, rng);
        auto [x, report] = orthogonalize(g, IterationSchedule::standard());
        CHECK(report.converged);
        const Matrix want = polar_factor(svd_oracle(g));
        CHECK(frobenius_norm(subtract(x, want)) <= 1e-5);
    }
}

TEST_CASE("orthogonalize works with spectral-estimate normalization") {
    std::mt19937_64 rng(17);
    const Matrix g = random_conditioned(6, 6, 20.0, rng);
    const IterationSchedule schedule({{1.5, -0.5}}, 40, Normalization::SpectralEstimate, 1e-7);
    auto [x, report] = orthogonalize(g, schedule);
    CHECK(report.converged);
    CHECK(frobenius_norm(subtract(x, polar_factor(svd_oracle(g)))) <= 1e-5);
}

TEST_CASE("orthogonalize reports non-convergence with the best iterate") {
    std::mt19937_64 rng(19);
    const Matrix g = random_conditioned(6, 6, 50.0, rng);
    const IterationSchedule starved({{1.5, -0.5}}, 1, Normalization::Frobenius, 1e-12);
    auto [x, report] = orthogonalize(g, starved);
    CHECK_FALSE(report.converged);
    CHECK(report.steps == 1);
    CHECK(report.residual > 1e-12);
    CHECK(all_finite(x));
}

TEST_CASE("rank preservation: zero singular values stay numerically zero") {
    std::mt19937_64 rng(23);
    const Matrix g = random_rank_deficient(64, 64, 10, 10.0, rng);
    auto [x, report] = orthogonalize(g, IterationSchedule::standard());
    CHECK(report.converged);
    const std::vector<double> sigma = svd_oracle(x).sigma;
    for (std::size_t i = 0; i < 10; ++i) CHECK(sigma[i] == doctest::Approx(1.0).epsilon(2e-5));
    for (std::size_t i = 10; i < sigma.size(); ++i) CHECK(sigma[i] <= 1e-8);
}

TEST_CASE("orthogonalize is equivariant under left orthogonal factors") {
    std::mt19937_64 rng(29);
    const Matrix g = random_conditioned(5, 4, 10.0, rng);
    const Matrix q = random_orthonormal(5, 5, rng);
    auto [x, r1] = orthogonalize(g, IterationSchedule::standard());
    auto [qx, r2] = orthogonalize(matmul(q, g), IterationSchedule::standard());
    CHECK(frobenius_norm(subtract(qx, matmul(q, x))) <= 1e-5);
}

TEST_CASE("orthogonalize is scale invariant") {
    std::mt19937_64 rng(31);
    const Matrix g = random_conditioned(5, 3, 10.0, rng);
    auto [a, r1] = orthogonalize(g, IterationSchedule::standard());
    auto [b, r2] = orthogonalize(scaled(g, 37.5), IterationSchedule::standard());
    CHECK(frobenius_norm(subtract(a, b)) <= 1e-5);
}

TEST_CASE("inverse root route on scaled and diagonal matrices") {
    const Matrix two_i = scaled(Matrix::identity(2), 2.0);
    CHECK(frobenius_norm(subtract(inverse_root_dualize(two_i), Matrix::identity(2))) <= 1e-9);

    Matrix d(2, 2);
    d(0, 0) = 3.0;
    d(1, 1) = 5.0;
    CHECK(frobenius_norm(subtract(inverse_root_dualize(d), Matrix::identity(2))) <= 1e-9);
}

TEST_CASE("inverse root route matches the oracle on well-conditioned input") {
    std::mt19937_64 rng(37);
    const Matrix g = random_conditioned(6, 4, 10.0, rng);
    const Matrix got = inverse_root_dualize(g);
    CHECK(frobenius_norm(subtract(got, polar_factor(svd_oracle(g)))) <= 1e-5);

    const Matrix wide = random_conditioned(4, 7, 10.0, rng);
    CHECK(frobenius_norm(subtract(inverse_root_dualize(wide),
                                  polar_factor(svd_oracle(wide)))) <= 1e-5);
}

TEST_CASE("inverse root route rejects ill-conditioned input") {
    std::mt19937_64 rng(41);
    const Matrix g = random_conditioned(6, 6, 1e5, rng);  // Gram condition ~ 1e10
    CHECK_THROWS_AS(inverse_root_dualize(g), IllConditionedError);
    CHECK_THROWS_AS(inverse_root_dualize(Matrix(4, 4)), IllConditionedError);
}

TEST_CASE("both polar routes agree with each other") {
    std::mt19937_64 rng(43);
    const Matrix g = random_conditioned(8, 5, 30.0, rng);
    auto [ns, report] = orthogonalize(g, IterationSchedule::standard());
    const Matrix ir = inverse_root_dualize(g);
    CHECK(frobenius_norm(subtract(ns, ir)) <= 2e-5);
}
