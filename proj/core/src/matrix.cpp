#include "dualkit/matrix.hpp"

#include <cmath>
#include <string>

#include "dualkit/errors.hpp"

namespace dualkit {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), entries_(rows * cols, 0.0) {
    if (rows == 0 || cols == 0) throw DimensionError("matrix dimensions must be positive");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    if (rows == 0 || cols == 0) throw DimensionError("matrix dimensions must be positive");
    if (entries_.size() != rows * cols) {
        throw DimensionError("entry count " + std::to_string(entries_.size()) + " does not match " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }
    for (double x : entries_) {
        if (!std::isfinite(x)) throw DimensionError("matrix entries must be finite");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                             " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    // i-k-j order keeps row-major accesses contiguous; for a fixed output
    // entry the accumulation order over k is fixed, so results are
    // bit-reproducible.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
    return out;
}

Matrix scaled(const Matrix& m, double c) {
    Matrix out = m;
    for (double& x : out.entries()) x *= c;
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("add: shape mismatch");
    Matrix out = a;
    auto bs = b.entries();
    auto os = out.entries();
    for (std::size_t i = 0; i < os.size(); ++i) os[i] += bs[i];
    return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("subtract: shape mismatch");
    Matrix out = a;
    auto bs = b.entries();
    auto os = out.entries();
    for (std::size_t i = 0; i < os.size(); ++i) os[i] -= bs[i];
    return out;
}

std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    if (m.cols() != x.size()) throw DimensionError("matvec: shape mismatch");
    std::vector<double> out(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) acc += m(i, j) * x[j];
        out[i] = acc;
    }
    return out;
}

std::vector<double> matvec_transposed(const Matrix& m, std::span<const double> x) {
    if (m.rows() != x.size()) throw DimensionError("matvec_transposed: shape mismatch");
    std::vector<double> out(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] += m(i, j) * xi;
    }
    return out;
}

std::vector<double> column(const Matrix& m, std::size_t j) {
    if (j >= m.cols()) throw DimensionError("column index out of range");
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, j);
    return out;
}

double frobenius_norm(const Matrix& m) { return l2_norm(m.entries()); }

double max_abs(const Matrix& m) {
    double best = 0.0;
    for (double x : m.entries()) best = std::max(best, std::abs(x));
    return best;
}

bool all_finite(const Matrix& m) { return all_finite(m.entries()); }

bool is_zero(const Matrix& m) {
    for (double x : m.entries())
        if (x != 0.0) return false;
    return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

double l1_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += std::abs(x);
    return acc;
}

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace dualkit
