#pragma once

#include <span>

#include "dualkit/matrix.hpp"
#include "dualkit/tensor.hpp"

namespace dualkit {

/// Normalized Euclidean norm ||v||_2 / sqrt(d). Throws on empty input.
double rms_norm(std::span<const double> v);

/// Largest singular value, estimated by power iteration on the Gram matrix.
/// The estimate is a Rayleigh quotient, so it never exceeds the true value.
/// Deterministic: an all-ones start plus one fixed-seed random restart.
/// A zero matrix returns 0.
double spectral_norm(const Matrix& g, double tol = 1e-13, int max_iters = 10000);

/// RMS -> RMS induced operator norm: sqrt(d_in/d_out) * sigma_max(w).
double op_norm_rms_rms(const Matrix& w);

/// l1 -> RMS induced operator norm: max over columns of the column RMS norm.
double op_norm_l1_rms(const Matrix& w);

/// Spatial max over pixels of the channel-vector RMS norm. The natural
/// input/output norm for image-shaped values.
double spatial_max_rms(const Tensor3& x);

}  // namespace dualkit
