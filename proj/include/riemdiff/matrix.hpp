#pragma once

// Small dense matrices (row-major doubles) plus the two factorizations the
// library needs: thin Householder QR for orthonormalizing tangent probes and
// a one-sided Jacobi SVD for projecting near-rotations back onto SO(n).
// Sizes here are tiny (ambient dimension <= 9), so clarity wins over BLAS.

#include <cstddef>
#include <vector>

namespace riemdiff {

struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a; // row-major, a[r*cols + c]

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> data);

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

    static Matrix identity(std::size_t n);
    Matrix transposed() const;
};

Matrix matmul(const Matrix& A, const Matrix& B);
double max_abs_diff(const Matrix& A, const Matrix& B);
double frobenius_norm(const Matrix& A);

struct QrResult {
    Matrix Q; // m x k, orthonormal columns
    Matrix R; // k x k, upper triangular, nonnegative diagonal
};

// Thin QR via Householder reflections, m >= k required. Throws
// RankDeficiencyError when a reduced column's norm falls below 1e-10.
QrResult qr_decompose(const Matrix& A);

struct SvdResult {
    Matrix U;              // n x n orthogonal
    std::vector<double> s; // singular values, descending, nonnegative
    Matrix V;              // n x n orthogonal; A = U * diag(s) * V^T
};

// One-sided Jacobi SVD for square matrices. Throws NumericError if the
// column-orthogonalization sweeps fail to converge within 100 passes.
SvdResult svd_square(const Matrix& A);

double determinant(const Matrix& A); // via LU with partial pivoting

} // namespace riemdiff
