#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dualkit {

/// Dense row-major matrix of 64-bit floats. Matrices are treated as
/// immutable values: every operation below returns a fresh result, so
/// sharing across threads needs no synchronization.
///
/// Entries must be finite; construction from data validates this.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);  // zero-filled
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return entries_.size(); }

    double operator()(std::size_t i, std::size_t j) const { return entries_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return entries_[i * cols_ + j]; }

    std::span<const double> entries() const { return entries_; }
    std::span<double> entries() { return entries_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> entries_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix scaled(const Matrix& m, double c);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);

std::vector<double> matvec(const Matrix& m, std::span<const double> x);
std::vector<double> matvec_transposed(const Matrix& m, std::span<const double> x);

std::vector<double> column(const Matrix& m, std::size_t j);

double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
bool all_finite(const Matrix& m);
bool is_zero(const Matrix& m);

// Vector helpers shared across the library.
double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double l1_norm(std::span<const double> v);
bool all_finite(std::span<const double> v);

}  // namespace dualkit
