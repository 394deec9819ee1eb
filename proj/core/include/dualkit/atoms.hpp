#pragma once

#include <span>
#include <variant>
#include <vector>

#include "dualkit/matrix.hpp"
#include "dualkit/newton_schulz.hpp"
#include "dualkit/norms.hpp"
#include "dualkit/space.hpp"
#include "dualkit/tensor.hpp"

namespace dualkit {

enum class AtomKind { Linear, Embed, Conv2D, BondReLU, BondFlatten };

/// Static description of a leaf module: kind, dimensions, mass and
/// sensitivity. Bonds carry no weights, have mass 0 and norm identically 0.
/// All shipped kinds have sensitivity 1.
struct AtomSpec {
    AtomKind kind;
    std::size_t d_out = 0, d_in = 0;       // Linear, Embed, Conv2D
    std::size_t k = 0;                     // Conv2D kernel size
    std::size_t in_width = 0, in_height = 0;  // Conv2D input image shape
    Space bond_space;                      // BondReLU operand space
    double mass = 0.0;
    double sensitivity = 1.0;

    static AtomSpec linear(std::size_t d_out, std::size_t d_in, double mass);
    static AtomSpec embed(std::size_t d_out, std::size_t d_in, double mass);
    static AtomSpec conv2d(std::size_t d_out, std::size_t d_in, std::size_t k,
                           std::size_t in_width, std::size_t in_height, double mass);
    static AtomSpec relu(Space space);
    static AtomSpec flatten(std::size_t width, std::size_t height, std::size_t channels);

    bool has_weights() const { return kind == AtomKind::Linear || kind == AtomKind::Embed ||
                                      kind == AtomKind::Conv2D; }
    Space input_space() const;
    Space output_space() const;

    bool operator==(const AtomSpec&) const = default;
};

/// Weight or gradient payload of one leaf; bonds hold monostate.
using LeafTensor = std::variant<std::monostate, Matrix, Tensor4>;

// -- forward maps ------------------------------------------------------

std::vector<double> linear_forward(const Matrix& w, std::span<const double> x);

/// Valid (no padding) stride-1 cross-correlation. Output channel c at pixel
/// (u, v) sums W[c,m,i,j] * x[u+i, v+j, m] over in-channels and the kernel.
Tensor3 conv2d_forward(const Tensor4& w, const Tensor3& x);

std::vector<double> relu(std::span<const double> x);
Tensor3 relu(const Tensor3& x);
std::vector<double> flatten(const Tensor3& x);

// -- weight-space norms ------------------------------------------------

inline double linear_norm(const Matrix& w) { return op_norm_rms_rms(w); }
inline double embed_norm(const Matrix& w) { return op_norm_l1_rms(w); }

/// k^2 times the max RMS->RMS norm over the k^2 kernel slices.
double conv2d_norm(const Tensor4& w);

// -- duality maps ------------------------------------------------------

/// sqrt(d_out/d_in) times the polar factor of g. dualize(0) = 0.
Matrix linear_dualize(const Matrix& g,
                      const IterationSchedule& schedule = IterationSchedule::standard());

/// Each column normalized to unit RMS norm; zero columns stay zero.
Matrix embed_dualize(const Matrix& g);

/// Each kernel slice mapped through (1/k^2) sqrt(d_out/d_in) times its polar
/// factor.
Tensor4 conv2d_dualize(const Tensor4& g,
                       const IterationSchedule& schedule = IterationSchedule::standard());

// -- exact adjoints ----------------------------------------------------

struct LinearGrads {
    Matrix w;
    std::vector<double> x;
};
LinearGrads linear_backward(const Matrix& w, std::span<const double> x,
                            std::span<const double> upstream);

struct Conv2DGrads {
    Tensor4 w;
    Tensor3 x;
};
Conv2DGrads conv2d_backward(const Tensor4& w, const Tensor3& x, const Tensor3& upstream);

/// Subgradient convention: derivative 0 at exactly 0.
std::vector<double> relu_backward(std::span<const double> x, std::span<const double> upstream);
Tensor3 relu_backward(const Tensor3& x, const Tensor3& upstream);

Tensor3 flatten_backward(std::size_t width, std::size_t height, std::size_t channels,
                         std::span<const double> upstream);

// -- semantic input norms (used by well-normedness probes) --------------

double linear_input_norm(std::span<const double> x);   // RMS
double embed_input_norm(std::span<const double> x);    // l1
double conv2d_input_norm(const Tensor3& x);            // spatial max channel RMS

}  // namespace dualkit
