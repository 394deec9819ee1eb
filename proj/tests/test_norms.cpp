#include <doctest.h>

#include <cmath>
#include <random>

#include "dualkit/checks.hpp"
#include "dualkit/errors.hpp"
#include "dualkit/norms.hpp"
#include "dualkit/svd.hpp"

using namespace dualkit;

TEST_CASE("rms_norm on unit, pythagorean and zero vectors") {
    const std::vector<double> ones{1.0, 1.0, 1.0, 1.0};
    CHECK(rms_norm(ones) == doctest::Approx(1.0));

    const std::vector<double> v{3.0, 4.0};
    CHECK(rms_norm(v) == doctest::Approx(5.0 / std::sqrt(2.0)));

    const std::vector<double> z{0.0, 0.0, 0.0};
    CHECK(rms_norm(z) == 0.0);

    CHECK_THROWS_AS(rms_norm(std::vector<double>{}), DimensionError);
}

TEST_CASE("spectral_norm on diagonal and zero matrices") {
    Matrix d(2, 2);
    d(0, 0) = 2.0;
    d(1, 1) = 7.0;
    CHECK(spectral_norm(d) == doctest::Approx(7.0).epsilon(1e-10));
    CHECK(spectral_norm(Matrix(3, 4)) == 0.0);
}

TEST_CASE("spectral_norm matches the exact SVD and never exceeds it") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix g = random_gaussian(8, 8, rng);
        const double truth = svd_oracle(g).sigma[0];
        const double est = spectral_norm(g);
        CHECK(est == doctest::Approx(truth).epsilon(1e-6));
        CHECK(est <= truth * (1.0 + 1e-12));
    }
}

TEST_CASE("op_norm_rms_rms on identity and diagonal") {
    CHECK(op_norm_rms_rms(Matrix::identity(5)) == doctest::Approx(1.0));
    Matrix d(2, 2);
    d(0, 0) = 1.0;
    d(1, 1) = 2.0;
    CHECK(op_norm_rms_rms(d) == doctest::Approx(2.0));
}

TEST_CASE("op_norm_rms_rms agrees with the rescaled oracle sigma_max") {
    std::mt19937_64 rng(29);
    const Matrix w = random_gaussian(5, 3, rng);
    const double want = std::sqrt(3.0 / 5.0) * svd_oracle(w).sigma[0];
    CHECK(op_norm_rms_rms(w) == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("op_norm_l1_rms equals the max column RMS") {
    CHECK(op_norm_l1_rms(Matrix::identity(2)) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(op_norm_l1_rms(Matrix(3, 4)) == 0.0);

    std::mt19937_64 rng(31);
    const Matrix w = random_gaussian(4, 6, rng);
    double want = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) acc += w(i, j) * w(i, j);
        want = std::max(want, std::sqrt(acc / 4.0));
    }
    CHECK(op_norm_l1_rms(w) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("operator norms bound matrix-vector products") {
    std::mt19937_64 rng(37);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t rows = 2 + trial % 5;
        const std::size_t cols = 2 + (trial / 5) % 5;
        const Matrix w = random_gaussian(rows, cols, rng);
        std::vector<double> x(cols);
        for (double& v : x) v = gauss(rng);
        const std::vector<double> wx = matvec(w, x);

        CHECK(rms_norm(wx) <= op_norm_rms_rms(w) * rms_norm(x) * (1.0 + 1e-9));
        CHECK(rms_norm(wx) <= op_norm_l1_rms(w) * l1_norm(x) * (1.0 + 1e-9));
    }
}

TEST_CASE("l1->RMS bound is tight at the one-hot of the best column") {
    std::mt19937_64 rng(41);
    const Matrix w = random_gaussian(4, 6, rng);
    std::size_t best = 0;
    double best_rms = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j) {
        const double r = rms_norm(column(w, j));
        if (r > best_rms) {
            best_rms = r;
            best = j;
        }
    }
    std::vector<double> onehot(w.cols(), 0.0);
    onehot[best] = 1.0;
    const std::vector<double> wx = matvec(w, onehot);
    CHECK(rms_norm(wx) == doctest::Approx(op_norm_l1_rms(w) * l1_norm(onehot)).epsilon(1e-12));
}
