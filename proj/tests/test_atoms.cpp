#include <doctest.h>

#include <cmath>
#include <random>

#include "dualkit/atoms.hpp"
#include "dualkit/checks.hpp"
#include "dualkit/errors.hpp"
#include "dualkit/svd.hpp"

using namespace dualkit;

namespace {

Tensor3 random_image(std::size_t w, std::size_t h, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor3 t(w, h, c);
    for (double& x : t.entries()) x = gauss(rng);
    return t;
}

Tensor4 random_kernel(std::size_t d_out, std::size_t d_in, std::size_t k, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor4 t(d_out, d_in, k, k);
    for (double& x : t.entries()) x = gauss(rng);
    return t;
}

// Direct six-loop reference for the valid stride-1 cross-correlation.
Tensor3 conv_reference(const Tensor4& w, const Tensor3& x) {
    const std::size_t k = w.k();
    Tensor3 out(x.width() - k + 1, x.height() - k + 1, w.d_out());
    for (std::size_t u = 0; u + k <= x.width(); ++u)
        for (std::size_t v = 0; v + k <= x.height(); ++v)
            for (std::size_t c = 0; c < w.d_out(); ++c)
                for (std::size_t m = 0; m < w.d_in(); ++m)
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t j = 0; j < k; ++j)
                            out(u, v, c) += w(c, m, i, j) * x(u + i, v + j, m);
    return out;
}

}  // namespace

TEST_CASE("linear_forward basics") {
    const std::vector<double> x{3.0, 4.0};
    CHECK(linear_forward(Matrix::identity(2), x) == x);
    CHECK(linear_forward(Matrix(3, 2), x) == std::vector<double>{0.0, 0.0, 0.0});
    CHECK_THROWS_AS(linear_forward(Matrix(3, 3), x), DimensionError);
}

TEST_CASE("linear_dualize scales the polar factor by sqrt(d_out/d_in)") {
    Matrix d(2, 2);
    d(0, 0) = 3.0;
    d(1, 1) = 5.0;
    const Matrix dualized = linear_dualize(d);
    CHECK(frobenius_norm(subtract(dualized, Matrix::identity(2))) <= 1e-6);

    CHECK(is_zero(linear_dualize(Matrix(3, 2))));

    std::mt19937_64 rng(71);
    const Matrix g = random_conditioned(4, 3, 20.0, rng);
    const Matrix want = scaled(polar_factor(svd_oracle(g)), std::sqrt(4.0 / 3.0));
    CHECK(frobenius_norm(subtract(linear_dualize(g), want)) <= 1e-5);
}

TEST_CASE("linear_dualize output has unit RMS->RMS norm and the table scaling") {
    std::mt19937_64 rng(73);
    const Matrix g = random_conditioned(5, 3, 10.0, rng);
    const Matrix dualized = linear_dualize(g);
    CHECK(linear_norm(dualized) == doctest::Approx(1.0).epsilon(1e-4));
    for (double s : svd_oracle(dualized).sigma)
        CHECK(s == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-5));
}

TEST_CASE("linear_dualize is idempotent up to tolerance on full-rank input") {
    std::mt19937_64 rng(79);
    const Matrix g = random_conditioned(4, 4, 5.0, rng);
    const Matrix once = linear_dualize(g);
    const Matrix twice = linear_dualize(once);
    CHECK(frobenius_norm(subtract(once, twice)) <= 1e-5);
}

TEST_CASE("embed_dualize normalizes columns and keeps zero columns") {
    Matrix g(3, 2);
    g(1, 0) = 3.0;
    g(2, 0) = 4.0;  // column 0 = (0,3,4), column 1 = 0
    const Matrix dualized = embed_dualize(g);
    const double scale = std::sqrt(3.0) / 5.0;
    CHECK(dualized(0, 0) == 0.0);
    CHECK(dualized(1, 0) == doctest::Approx(3.0 * scale).epsilon(1e-12));
    CHECK(dualized(2, 0) == doctest::Approx(4.0 * scale).epsilon(1e-12));
    for (std::size_t i = 0; i < 3; ++i) CHECK(dualized(i, 1) == 0.0);

    CHECK(is_zero(embed_dualize(Matrix(4, 4))));
}

TEST_CASE("embed_dualize columns have unit RMS and match a column loop") {
    std::mt19937_64 rng(83);
    const Matrix g = random_gaussian(8, 5, rng);
    const Matrix dualized = embed_dualize(g);
    CHECK(embed_norm(dualized) == doctest::Approx(1.0).epsilon(1e-10));
    for (std::size_t j = 0; j < g.cols(); ++j) {
        const std::vector<double> col = column(g, j);
        const double r = rms_norm(col);
        for (std::size_t i = 0; i < g.rows(); ++i)
            CHECK(dualized(i, j) == doctest::Approx(g(i, j) / r).epsilon(1e-9));
        CHECK(rms_norm(column(dualized, j)) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("conv2d_forward matches the naive reference and its degeneracies") {
    std::mt19937_64 rng(89);

    // k = 1 reduces to a per-pixel linear map.
    const Tensor4 w1 = random_kernel(4, 2, 1, rng);
    const Tensor3 x = random_image(5, 5, 2, rng);
    const Tensor3 y1 = conv2d_forward(w1, x);
    const Matrix slice = w1.kernel_slice(0, 0);
    for (std::size_t u = 0; u < 5; ++u)
        for (std::size_t v = 0; v < 5; ++v) {
            const std::vector<double> pixel{x(u, v, 0), x(u, v, 1)};
            const std::vector<double> want = linear_forward(slice, pixel);
            for (std::size_t c = 0; c < 4; ++c)
                CHECK(y1(u, v, c) == doctest::Approx(want[c]).epsilon(1e-12));
        }

    // Zero weights give zero output.
    const Tensor3 zero_out = conv2d_forward(Tensor4(4, 2, 3, 3), x);
    for (double e : zero_out.entries()) CHECK(e == 0.0);

    // Random case against the six-loop reference.
    const Tensor4 w = random_kernel(4, 2, 3, rng);
    const Tensor3 got = conv2d_forward(w, x);
    const Tensor3 want = conv_reference(w, x);
    CHECK(got.width() == 3);
    CHECK(got.height() == 3);
    CHECK(got.channels() == 4);
    for (std::size_t i = 0; i < got.entries().size(); ++i)
        CHECK(got.entries()[i] == doctest::Approx(want.entries()[i]).epsilon(1e-12));

    CHECK_THROWS_AS(conv2d_forward(w, random_image(2, 2, 2, rng)), DimensionError);
}

TEST_CASE("conv2d_norm is k^2 times the worst slice norm") {
    std::mt19937_64 rng(97);
    const Tensor4 w1 = random_kernel(3, 3, 1, rng);
    CHECK(conv2d_norm(w1) ==
          doctest::Approx(op_norm_rms_rms(w1.kernel_slice(0, 0))).epsilon(1e-12));

    // One identity slice among zeros: norm = k^2.
    Tensor4 w(2, 2, 2, 2);
    w.set_kernel_slice(1, 0, Matrix::identity(2));
    CHECK(conv2d_norm(w) == doctest::Approx(4.0).epsilon(1e-12));

    const Tensor4 wr = random_kernel(4, 3, 2, rng);
    double best = 0.0;
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
            best = std::max(best,
                            std::sqrt(3.0 / 4.0) * svd_oracle(wr.kernel_slice(r, c)).sigma[0]);
    CHECK(conv2d_norm(wr) == doctest::Approx(4.0 * best).epsilon(1e-8));
}

TEST_CASE("conv2d_dualize maps slices through the scaled polar factor") {
    std::mt19937_64 rng(101);

    // k = 1 degenerates to linear_dualize.
    const Tensor4 g1 = random_kernel(4, 3, 1, rng);
    const Tensor4 d1 = conv2d_dualize(g1);
    CHECK(frobenius_norm(
              subtract(d1.kernel_slice(0, 0), linear_dualize(g1.kernel_slice(0, 0)))) <= 1e-9);

    // Equal positive-diagonal slices: every slice becomes I/k^2.
    Tensor4 g(2, 2, 2, 2);
    Matrix diag(2, 2);
    diag(0, 0) = 2.0;
    diag(1, 1) = 3.0;
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c) g.set_kernel_slice(r, c, diag);
    const Tensor4 d = conv2d_dualize(g);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
            CHECK(frobenius_norm(
                      subtract(d.kernel_slice(r, c), scaled(Matrix::identity(2), 0.25))) <= 1e-6);

    // Random case: per-slice oracle comparison, table scaling, unit norm.
    Tensor4 gr(4, 3, 3, 3);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            gr.set_kernel_slice(r, c, random_conditioned(4, 3, 10.0, rng));
    const Tensor4 dr = conv2d_dualize(gr);
    const double scale = std::sqrt(4.0 / 3.0) / 9.0;
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
            const Matrix want = scaled(polar_factor(svd_oracle(gr.kernel_slice(r, c))), scale);
            CHECK(frobenius_norm(subtract(dr.kernel_slice(r, c), want)) <= 1e-5);
            for (double s : svd_oracle(dr.kernel_slice(r, c)).sigma)
                CHECK(s == doctest::Approx(scale).epsilon(1e-5));
        }
    CHECK(conv2d_norm(dr) == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("linear_backward computes the exact adjoints") {
    // Outer-product case: upstream = e1, x = e1.
    const Matrix w(2, 2, {1.0, 2.0, 3.0, 4.0});
    const std::vector<double> x{1.0, 0.0};
    const std::vector<double> upstream{1.0, 0.0};
    const LinearGrads grads = linear_backward(w, x, upstream);
    CHECK(grads.w(0, 0) == 1.0);
    CHECK(grads.w(0, 1) == 0.0);
    CHECK(grads.w(1, 0) == 0.0);
    CHECK(grads.w(1, 1) == 0.0);
    CHECK(grads.x == std::vector<double>{1.0, 3.0});
}

TEST_CASE("relu forward and backward use the 1[x>0] subgradient") {
    const std::vector<double> x{-1.0, 2.0, 0.0};
    const std::vector<double> ones{1.0, 1.0, 1.0};
    CHECK(relu(x) == std::vector<double>{0.0, 2.0, 0.0});
    CHECK(relu_backward(x, ones) == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("atom backward matches directional finite differences") {
    std::mt19937_64 rng(103);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double h = 1e-4;

    auto directional = [&](auto&& eval, double expected) {
        const double fd = (eval(h) - eval(-h)) / (2.0 * h);
        CHECK(fd == doctest::Approx(expected).epsilon(1e-5));
    };

    // Linear.
    {
        const Matrix w = random_gaussian(4, 3, rng);
        const Matrix dw = random_gaussian(4, 3, rng);
        std::vector<double> x(3), dx(3), up(4);
        for (double& v : x) v = gauss(rng);
        for (double& v : dx) v = gauss(rng);
        for (double& v : up) v = gauss(rng);
        const LinearGrads grads = linear_backward(w, x, up);
        const double expected = dot(grads.w.entries(), dw.entries()) + dot(grads.x, dx);
        directional(
            [&](double t) {
                const Matrix wt = add(w, scaled(dw, t));
                std::vector<double> xt = x;
                for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += t * dx[i];
                return dot(linear_forward(wt, xt), up);
            },
            expected);
    }

    // Conv2D.
    {
        const Tensor4 w = random_kernel(3, 2, 2, rng);
        const Tensor4 dw = random_kernel(3, 2, 2, rng);
        const Tensor3 x = random_image(4, 4, 2, rng);
        const Tensor3 dx = random_image(4, 4, 2, rng);
        const Tensor3 up = random_image(3, 3, 3, rng);
        const Conv2DGrads grads = conv2d_backward(w, x, up);
        const double expected =
            dot(grads.w.entries(), dw.entries()) + dot(grads.x.entries(), dx.entries());
        directional(
            [&](double t) {
                Tensor4 wt = w;
                for (std::size_t i = 0; i < wt.entries().size(); ++i)
                    wt.entries()[i] += t * dw.entries()[i];
                Tensor3 xt = x;
                for (std::size_t i = 0; i < xt.entries().size(); ++i)
                    xt.entries()[i] += t * dx.entries()[i];
                return dot(conv2d_forward(wt, xt).entries(), up.entries());
            },
            expected);
    }

    // ReLU, away from the kink.
    {
        std::vector<double> x(6), dx(6), up(6);
        for (double& v : x) v = gauss(rng);
        for (double& v : x)
            if (std::abs(v) < 1e-2) v = 0.5;  // keep the finite differences valid
        for (double& v : dx) v = gauss(rng);
        for (double& v : up) v = gauss(rng);
        const std::vector<double> gx = relu_backward(x, up);
        directional(
            [&](double t) {
                std::vector<double> xt = x;
                for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += t * dx[i];
                return dot(relu(xt), up);
            },
            dot(gx, dx));
    }
}

TEST_CASE("dualize pairing beats random unit-norm directions for every atom") {
    std::mt19937_64 rng(107);
    const int samples = 10000;

    // Linear.
    {
        const Matrix g = random_gaussian(4, 3, rng);
        const double paired = dot(g.entries(), linear_dualize(g).entries());
        for (int s = 0; s < samples; ++s) {
            Matrix t = random_gaussian(4, 3, rng);
            t = scaled(t, 1.0 / linear_norm(t));
            CHECK(dot(g.entries(), t.entries()) <= paired + 1e-9);
        }
    }
    // Embed.
    {
        const Matrix g = random_gaussian(4, 3, rng);
        const double paired = dot(g.entries(), embed_dualize(g).entries());
        for (int s = 0; s < samples; ++s) {
            Matrix t = random_gaussian(4, 3, rng);
            t = scaled(t, 1.0 / embed_norm(t));
            CHECK(dot(g.entries(), t.entries()) <= paired + 1e-9);
        }
    }
    // Conv2D.
    {
        const Tensor4 g = random_kernel(3, 2, 2, rng);
        const Tensor4 d = conv2d_dualize(g);
        const double paired = dot(g.entries(), d.entries());
        for (int s = 0; s < samples; ++s) {
            Tensor4 t = random_kernel(3, 2, 2, rng);
            const double n = conv2d_norm(t);
            for (double& e : t.entries()) e /= n;
            CHECK(dot(g.entries(), t.entries()) <= paired + 1e-9);
        }
    }
}

TEST_CASE("well-normedness equality is achievable for Linear at the top singular vector") {
    std::mt19937_64 rng(109);
    const Matrix w = random_gaussian(5, 4, rng);
    const SvdResult s = svd_oracle(w);
    std::vector<double> x_star = column(s.v, 0);
    for (double& v : x_star) v *= std::sqrt(4.0);  // unit RMS
    CHECK(rms_norm(x_star) == doctest::Approx(1.0).epsilon(1e-12));
    const double ratio = rms_norm(linear_forward(w, x_star)) / (linear_norm(w) * rms_norm(x_star));
    CHECK(ratio == doctest::Approx(1.0).epsilon(1e-6));
}
