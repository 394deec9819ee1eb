#include "dualkit/tensor.hpp"

#include <cmath>
#include <string>

#include "dualkit/errors.hpp"

namespace dualkit {

namespace {

void require_finite(std::span<const double> entries, const char* what) {
    for (double x : entries) {
        if (!std::isfinite(x)) throw DimensionError(std::string(what) + " entries must be finite");
    }
}

}  // namespace

Tensor3::Tensor3(std::size_t width, std::size_t height, std::size_t channels)
    : width_(width), height_(height), channels_(channels), entries_(width * height * channels, 0.0) {
    if (width == 0 || height == 0 || channels == 0)
        throw DimensionError("Tensor3 dimensions must be positive");
}

Tensor3::Tensor3(std::size_t width, std::size_t height, std::size_t channels,
                 std::vector<double> entries)
    : width_(width), height_(height), channels_(channels), entries_(std::move(entries)) {
    if (width == 0 || height == 0 || channels == 0)
        throw DimensionError("Tensor3 dimensions must be positive");
    if (entries_.size() != width * height * channels)
        throw DimensionError("Tensor3 entry count does not match shape");
    require_finite(entries_, "Tensor3");
}

Tensor4::Tensor4(std::size_t d_out, std::size_t d_in, std::size_t k_h, std::size_t k_w)
    : d_out_(d_out), d_in_(d_in), k_(k_h), entries_(d_out * d_in * k_h * k_w, 0.0) {
    if (d_out == 0 || d_in == 0 || k_h == 0) throw DimensionError("Tensor4 dimensions must be positive");
    if (k_h != k_w) throw DimensionError("Tensor4 kernels must be square (k_h = k_w)");
}

Tensor4::Tensor4(std::size_t d_out, std::size_t d_in, std::size_t k_h, std::size_t k_w,
                 std::vector<double> entries)
    : d_out_(d_out), d_in_(d_in), k_(k_h), entries_(std::move(entries)) {
    if (d_out == 0 || d_in == 0 || k_h == 0) throw DimensionError("Tensor4 dimensions must be positive");
    if (k_h != k_w) throw DimensionError("Tensor4 kernels must be square (k_h = k_w)");
    if (entries_.size() != d_out * d_in * k_h * k_w)
        throw DimensionError("Tensor4 entry count does not match shape");
    require_finite(entries_, "Tensor4");
}

Matrix Tensor4::kernel_slice(std::size_t r, std::size_t c) const {
    if (r >= k_ || c >= k_) throw DimensionError("kernel index out of range");
    Matrix slice(d_out_, d_in_);
    for (std::size_t o = 0; o < d_out_; ++o)
        for (std::size_t i = 0; i < d_in_; ++i) slice(o, i) = (*this)(o, i, r, c);
    return slice;
}

void Tensor4::set_kernel_slice(std::size_t r, std::size_t c, const Matrix& slice) {
    if (r >= k_ || c >= k_) throw DimensionError("kernel index out of range");
    if (slice.rows() != d_out_ || slice.cols() != d_in_)
        throw DimensionError("kernel slice shape mismatch");
    for (std::size_t o = 0; o < d_out_; ++o)
        for (std::size_t i = 0; i < d_in_; ++i) (*this)(o, i, r, c) = slice(o, i);
}

}  // namespace dualkit
