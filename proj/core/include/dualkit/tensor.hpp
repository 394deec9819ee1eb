#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dualkit/matrix.hpp"

namespace dualkit {

/// Image-shaped value: width x height x channels, used as the input and
/// output carrier for 2-D convolution.
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(std::size_t width, std::size_t height, std::size_t channels);
    Tensor3(std::size_t width, std::size_t height, std::size_t channels, std::vector<double> entries);

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t channels() const { return channels_; }
    std::size_t size() const { return entries_.size(); }

    double operator()(std::size_t u, std::size_t v, std::size_t m) const {
        return entries_[(u * height_ + v) * channels_ + m];
    }
    double& operator()(std::size_t u, std::size_t v, std::size_t m) {
        return entries_[(u * height_ + v) * channels_ + m];
    }

    std::span<const double> entries() const { return entries_; }
    std::span<double> entries() { return entries_; }

    bool operator==(const Tensor3&) const = default;

private:
    std::size_t width_ = 0, height_ = 0, channels_ = 0;
    std::vector<double> entries_;
};

/// Convolution weight carrier: d_out x d_in x k x k, canonical index order
/// (out-channel, in-channel, kernel-row, kernel-col). Kernels are square.
class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(std::size_t d_out, std::size_t d_in, std::size_t k_h, std::size_t k_w);
    Tensor4(std::size_t d_out, std::size_t d_in, std::size_t k_h, std::size_t k_w,
            std::vector<double> entries);

    std::size_t d_out() const { return d_out_; }
    std::size_t d_in() const { return d_in_; }
    std::size_t k() const { return k_; }
    std::size_t size() const { return entries_.size(); }

    double operator()(std::size_t o, std::size_t i, std::size_t r, std::size_t c) const {
        return entries_[((o * d_in_ + i) * k_ + r) * k_ + c];
    }
    double& operator()(std::size_t o, std::size_t i, std::size_t r, std::size_t c) {
        return entries_[((o * d_in_ + i) * k_ + r) * k_ + c];
    }

    std::span<const double> entries() const { return entries_; }
    std::span<double> entries() { return entries_; }

    /// The d_out x d_in matrix at kernel index (r, c).
    Matrix kernel_slice(std::size_t r, std::size_t c) const;
    void set_kernel_slice(std::size_t r, std::size_t c, const Matrix& slice);

    bool operator==(const Tensor4&) const = default;

private:
    std::size_t d_out_ = 0, d_in_ = 0, k_ = 0;
    std::vector<double> entries_;
};

}  // namespace dualkit
