#include "dualkit/atoms.hpp"

#include <cmath>
#include <string>

#include "dualkit/errors.hpp"

namespace dualkit {

namespace {

// Keeps dualized factors strictly inside the unit operator-norm ball
// despite rounding in the polar iteration and norm measurement.
constexpr double kInsideBall = 1.0 + 1e-12;

}  // namespace

AtomSpec AtomSpec::linear(std::size_t d_out, std::size_t d_in, double mass) {
    if (d_out == 0 || d_in == 0) throw DimensionError("linear atom dimensions must be positive");
    if (mass < 0.0) throw DimensionError("atom mass must be non-negative");
    AtomSpec spec;
    spec.kind = AtomKind::Linear;
    spec.d_out = d_out;
    spec.d_in = d_in;
    spec.mass = mass;
    return spec;
}

AtomSpec AtomSpec::embed(std::size_t d_out, std::size_t d_in, double mass) {
    AtomSpec spec = linear(d_out, d_in, mass);
    spec.kind = AtomKind::Embed;
    return spec;
}

AtomSpec AtomSpec::conv2d(std::size_t d_out, std::size_t d_in, std::size_t k,
                          std::size_t in_width, std::size_t in_height, double mass) {
    if (d_out == 0 || d_in == 0) throw DimensionError("conv2d atom dimensions must be positive");
    if (k == 0) throw DimensionError("conv2d kernel size must be at least 1");
    if (in_width < k || in_height < k)
        throw DimensionError("conv2d input image must be at least kernel-sized");
    if (mass < 0.0) throw DimensionError("atom mass must be non-negative");
    AtomSpec spec;
    spec.kind = AtomKind::Conv2D;
    spec.d_out = d_out;
    spec.d_in = d_in;
    spec.k = k;
    spec.in_width = in_width;
    spec.in_height = in_height;
    spec.mass = mass;
    return spec;
}

AtomSpec AtomSpec::relu(Space space) {
    AtomSpec spec;
    spec.kind = AtomKind::BondReLU;
    spec.bond_space = space;
    spec.mass = 0.0;
    return spec;
}

AtomSpec AtomSpec::flatten(std::size_t width, std::size_t height, std::size_t channels) {
    if (width == 0 || height == 0 || channels == 0)
        throw DimensionError("flatten bond dimensions must be positive");
    AtomSpec spec;
    spec.kind = AtomKind::BondFlatten;
    spec.bond_space = ImageSpace{width, height, channels};
    spec.mass = 0.0;
    return spec;
}

Space AtomSpec::input_space() const {
    switch (kind) {
        case AtomKind::Linear:
        case AtomKind::Embed:
            return VectorSpace{d_in};
        case AtomKind::Conv2D:
            return ImageSpace{in_width, in_height, d_in};
        case AtomKind::BondReLU:
        case AtomKind::BondFlatten:
            return bond_space;
    }
    throw DimensionError("unknown atom kind");
}

Space AtomSpec::output_space() const {
    switch (kind) {
        case AtomKind::Linear:
        case AtomKind::Embed:
            return VectorSpace{d_out};
        case AtomKind::Conv2D:
            return ImageSpace{in_width - k + 1, in_height - k + 1, d_out};
        case AtomKind::BondReLU:
            return bond_space;
        case AtomKind::BondFlatten: {
            const auto& img = std::get<ImageSpace>(bond_space);
            return VectorSpace{img.width * img.height * img.channels};
        }
    }
    throw DimensionError("unknown atom kind");
}

std::vector<double> linear_forward(const Matrix& w, std::span<const double> x) {
    return matvec(w, x);
}

Tensor3 conv2d_forward(const Tensor4& w, const Tensor3& x) {
    if (x.channels() != w.d_in()) throw DimensionError("conv2d_forward: channel mismatch");
    const std::size_t k = w.k();
    if (x.width() < k || x.height() < k)
        throw DimensionError("conv2d_forward: spatial dimensions smaller than kernel");
    const std::size_t out_w = x.width() - k + 1;
    const std::size_t out_h = x.height() - k + 1;
    Tensor3 out(out_w, out_h, w.d_out());
    for (std::size_t u = 0; u < out_w; ++u) {
        for (std::size_t v = 0; v < out_h; ++v) {
            for (std::size_t c = 0; c < w.d_out(); ++c) {
                double acc = 0.0;
                for (std::size_t m = 0; m < w.d_in(); ++m)
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t j = 0; j < k; ++j)
                            acc += w(c, m, i, j) * x(u + i, v + j, m);
                out(u, v, c) = acc;
            }
        }
    }
    return out;
}

std::vector<double> relu(std::span<const double> x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

Tensor3 relu(const Tensor3& x) {
    Tensor3 out = x;
    for (double& v : out.entries()) v = v > 0.0 ? v : 0.0;
    return out;
}

std::vector<double> flatten(const Tensor3& x) {
    return std::vector<double>(x.entries().begin(), x.entries().end());
}

double conv2d_norm(const Tensor4& w) {
    double best = 0.0;
    for (std::size_t r = 0; r < w.k(); ++r)
        for (std::size_t c = 0; c < w.k(); ++c)
            best = std::max(best, op_norm_rms_rms(w.kernel_slice(r, c)));
    return static_cast<double>(w.k() * w.k()) * best;
}

Matrix linear_dualize(const Matrix& g, const IterationSchedule& schedule) {
    if (is_zero(g)) return g;
    auto [polar, report] = orthogonalize(g, schedule);
    if (!report.converged) {
        throw NonConvergenceError("linear_dualize: polar iteration did not converge (residual " +
                                      std::to_string(report.residual) + ")",
                                  report.steps, report.residual);
    }
    const double scale =
        std::sqrt(static_cast<double>(g.rows()) / static_cast<double>(g.cols())) / kInsideBall;
    return scaled(polar, scale);
}

Matrix embed_dualize(const Matrix& g) {
    if (!all_finite(g)) throw DimensionError("embed_dualize: input must be finite");
    Matrix out(g.rows(), g.cols());
    for (std::size_t j = 0; j < g.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.rows(); ++i) acc += g(i, j) * g(i, j);
        const double col_rms = std::sqrt(acc / static_cast<double>(g.rows()));
        if (col_rms == 0.0) continue;  // zero columns stay zero
        const double inv = 1.0 / (col_rms * kInsideBall);
        for (std::size_t i = 0; i < g.rows(); ++i) out(i, j) = g(i, j) * inv;
    }
    return out;
}

Tensor4 conv2d_dualize(const Tensor4& g, const IterationSchedule& schedule) {
    Tensor4 out(g.d_out(), g.d_in(), g.k(), g.k());
    const double scale = std::sqrt(static_cast<double>(g.d_out()) / static_cast<double>(g.d_in())) /
                         (static_cast<double>(g.k() * g.k()) * kInsideBall);
    for (std::size_t r = 0; r < g.k(); ++r) {
        for (std::size_t c = 0; c < g.k(); ++c) {
            const Matrix slice = g.kernel_slice(r, c);
            if (is_zero(slice)) continue;
            auto [polar, report] = orthogonalize(slice, schedule);
            if (!report.converged) {
                throw NonConvergenceError("conv2d_dualize: slice (" + std::to_string(r) + ", " +
                                              std::to_string(c) + ") did not converge",
                                          report.steps, report.residual);
            }
            out.set_kernel_slice(r, c, scaled(polar, scale));
        }
    }
    return out;
}

LinearGrads linear_backward(const Matrix& w, std::span<const double> x,
                            std::span<const double> upstream) {
    if (x.size() != w.cols() || upstream.size() != w.rows())
        throw DimensionError("linear_backward: shape mismatch");
    Matrix grad_w(w.rows(), w.cols());
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) grad_w(i, j) = upstream[i] * x[j];
    return LinearGrads{std::move(grad_w), matvec_transposed(w, upstream)};
}

Conv2DGrads conv2d_backward(const Tensor4& w, const Tensor3& x, const Tensor3& upstream) {
    const std::size_t k = w.k();
    const std::size_t out_w = x.width() - k + 1;
    const std::size_t out_h = x.height() - k + 1;
    if (upstream.width() != out_w || upstream.height() != out_h ||
        upstream.channels() != w.d_out())
        throw DimensionError("conv2d_backward: upstream shape mismatch");

    Tensor4 grad_w(w.d_out(), w.d_in(), k, k);
    for (std::size_t c = 0; c < w.d_out(); ++c)
        for (std::size_t m = 0; m < w.d_in(); ++m)
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    double acc = 0.0;
                    for (std::size_t u = 0; u < out_w; ++u)
                        for (std::size_t v = 0; v < out_h; ++v)
                            acc += upstream(u, v, c) * x(u + i, v + j, m);
                    grad_w(c, m, i, j) = acc;
                }

    Tensor3 grad_x(x.width(), x.height(), x.channels());
    for (std::size_t u = 0; u < out_w; ++u)
        for (std::size_t v = 0; v < out_h; ++v)
            for (std::size_t c = 0; c < w.d_out(); ++c) {
                const double up = upstream(u, v, c);
                if (up == 0.0) continue;
                for (std::size_t m = 0; m < w.d_in(); ++m)
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t j = 0; j < k; ++j)
                            grad_x(u + i, v + j, m) += up * w(c, m, i, j);
            }
    return Conv2DGrads{std::move(grad_w), std::move(grad_x)};
}

std::vector<double> relu_backward(std::span<const double> x, std::span<const double> upstream) {
    if (x.size() != upstream.size()) throw DimensionError("relu_backward: shape mismatch");
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? upstream[i] : 0.0;
    return out;
}

Tensor3 relu_backward(const Tensor3& x, const Tensor3& upstream) {
    if (x.entries().size() != upstream.entries().size())
        throw DimensionError("relu_backward: shape mismatch");
    Tensor3 out = upstream;
    auto xs = x.entries();
    auto os = out.entries();
    for (std::size_t i = 0; i < os.size(); ++i)
        if (xs[i] <= 0.0) os[i] = 0.0;
    return out;
}

Tensor3 flatten_backward(std::size_t width, std::size_t height, std::size_t channels,
                         std::span<const double> upstream) {
    if (upstream.size() != width * height * channels)
        throw DimensionError("flatten_backward: size mismatch");
    return Tensor3(width, height, channels,
                   std::vector<double>(upstream.begin(), upstream.end()));
}

double linear_input_norm(std::span<const double> x) { return rms_norm(x); }
double embed_input_norm(std::span<const double> x) { return l1_norm(x); }
double conv2d_input_norm(const Tensor3& x) { return spatial_max_rms(x); }

}  // namespace dualkit
