#include "riemdiff/matrix.hpp"

#include "riemdiff/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace riemdiff {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> data)
    : rows(r), cols(c), a(std::move(data)) {
    if (a.size() != r * c)
        throw ContractError("matrix data size does not match shape");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix I(n, n);
    for (std::size_t i = 0; i < n; ++i) I(i, i) = 1.0;
    return I;
}

Matrix Matrix::transposed() const {
    Matrix T(cols, rows);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) T(c, r) = (*this)(r, c);
    return T;
}

Matrix matmul(const Matrix& A, const Matrix& B) {
    if (A.cols != B.rows) throw ContractError("matmul shape mismatch");
    Matrix C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = A(i, k);
            for (std::size_t j = 0; j < B.cols; ++j) C(i, j) += aik * B(k, j);
        }
    return C;
}

double max_abs_diff(const Matrix& A, const Matrix& B) {
    if (A.rows != B.rows || A.cols != B.cols) throw ContractError("shape mismatch in comparison");
    double m = 0.0;
    for (std::size_t i = 0; i < A.a.size(); ++i) m = std::max(m, std::fabs(A.a[i] - B.a[i]));
    return m;
}

double frobenius_norm(const Matrix& A) {
    double s = 0.0;
    for (double v : A.a) s += v * v;
    return std::sqrt(s);
}

QrResult qr_decompose(const Matrix& A) {
    const std::size_t m = A.rows, k = A.cols;
    if (m < k) throw ContractError("qr_decompose expects rows >= cols");
    if (k == 0) throw ContractError("qr_decompose on an empty matrix");

    Matrix W = A;
    // Householder vectors, one per column, stored with their squared norms.
    std::vector<std::vector<double>> hv(k);
    std::vector<double> hv2(k, 0.0);

    for (std::size_t j = 0; j < k; ++j) {
        double colnorm = 0.0;
        for (std::size_t i = j; i < m; ++i) colnorm += W(i, j) * W(i, j);
        colnorm = std::sqrt(colnorm);
        if (colnorm < 1e-10)
            throw RankDeficiencyError("column " + std::to_string(j) +
                                      " is numerically dependent on earlier columns");

        // Reflect the reduced column onto +-|x| e1, choosing the sign that
        // avoids cancellation in v = x - alpha e1.
        const double alpha = (W(j, j) >= 0.0) ? -colnorm : colnorm;
        std::vector<double> v(m - j);
        v[0] = W(j, j) - alpha;
        for (std::size_t i = j + 1; i < m; ++i) v[i - j] = W(i, j);
        double v2 = 0.0;
        for (double x : v) v2 += x * x;
        if (v2 == 0.0) v2 = 1.0; // column already aligned with e1; reflector is a no-op

        // Apply H = I - 2 v v^T / (v^T v) to the trailing block of W.
        for (std::size_t c = j; c < k; ++c) {
            double dot = 0.0;
            for (std::size_t i = j; i < m; ++i) dot += v[i - j] * W(i, c);
            const double f = 2.0 * dot / v2;
            for (std::size_t i = j; i < m; ++i) W(i, c) -= f * v[i - j];
        }
        hv[j] = std::move(v);
        hv2[j] = v2;
    }

    QrResult out;
    out.R = Matrix(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i; j < k; ++j) out.R(i, j) = W(i, j);

    // Thin Q: apply the reflectors in reverse order to the first k columns of I.
    out.Q = Matrix(m, k);
    for (std::size_t j = 0; j < k; ++j) out.Q(j, j) = 1.0;
    for (std::size_t jj = k; jj-- > 0;) {
        const auto& v = hv[jj];
        for (std::size_t c = 0; c < k; ++c) {
            double dot = 0.0;
            for (std::size_t i = jj; i < m; ++i) dot += v[i - jj] * out.Q(i, c);
            const double f = 2.0 * dot / hv2[jj];
            for (std::size_t i = jj; i < m; ++i) out.Q(i, c) -= f * v[i - jj];
        }
    }

    // Fix signs so that diag(R) >= 0.
    for (std::size_t j = 0; j < k; ++j) {
        if (out.R(j, j) < 0.0) {
            for (std::size_t c = j; c < k; ++c) out.R(j, c) = -out.R(j, c);
            for (std::size_t i = 0; i < m; ++i) out.Q(i, j) = -out.Q(i, j);
        }
    }
    return out;
}

SvdResult svd_square(const Matrix& A) {
    if (A.rows != A.cols) throw ContractError("svd_square expects a square matrix");
    const std::size_t n = A.rows;

    Matrix W = A;
    Matrix V = Matrix::identity(n);

    // One-sided Jacobi: rotate column pairs of W until all pairs are
    // orthogonal; the same rotations accumulate into V.
    const int max_sweeps = 100;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    app += W(i, p) * W(i, p);
                    aqq += W(i, q) * W(i, q);
                    apq += W(i, p) * W(i, q);
                }
                if (std::fabs(apq) <= 1e-15 * std::sqrt(app * aqq) || apq == 0.0)
                    continue;
                converged = false;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double wp = W(i, p), wq = W(i, q);
                    W(i, p) = cs * wp - sn * wq;
                    W(i, q) = sn * wp + cs * wq;
                    const double vp = V(i, p), vq = V(i, q);
                    V(i, p) = cs * vp - sn * vq;
                    V(i, q) = sn * vp + cs * vq;
                }
            }
        }
    }
    if (!converged)
        throw NumericError("jacobi svd did not converge within 100 sweeps");

    SvdResult out;
    out.s.assign(n, 0.0);
    out.U = Matrix(n, n);
    out.V = V;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> norms(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) s2 += W(i, j) * W(i, j);
        norms[j] = std::sqrt(s2);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.s[j] = norms[src];
        for (std::size_t i = 0; i < n; ++i) {
            out.V(i, j) = V(i, src);
            out.U(i, j) = (norms[src] > 1e-300) ? W(i, src) / norms[src] : 0.0;
        }
    }

    // Complete U where singular values vanished: fill with standard basis
    // vectors orthogonalized against every column that is already valid
    // (nonzero singular value, or a null column filled on an earlier pass).
    for (std::size_t j = 0; j < n; ++j) {
        if (out.s[j] > 1e-300) continue;
        for (std::size_t cand = 0; cand < n; ++cand) {
            std::vector<double> u(n, 0.0);
            u[cand] = 1.0;
            for (std::size_t c = 0; c < n; ++c) {
                if (c != j && (out.s[c] > 1e-300 || c < j)) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < n; ++i) dot += u[i] * out.U(i, c);
                    for (std::size_t i = 0; i < n; ++i) u[i] -= dot * out.U(i, c);
                }
            }
            double nn = 0.0;
            for (double x : u) nn += x * x;
            if (nn > 1e-8) {
                nn = std::sqrt(nn);
                for (std::size_t i = 0; i < n; ++i) out.U(i, j) = u[i] / nn;
                break;
            }
        }
    }
    return out;
}

double determinant(const Matrix& A) {
    if (A.rows != A.cols) throw ContractError("determinant expects a square matrix");
    const std::size_t n = A.rows;
    Matrix W = A;
    double det = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t piv = j;
        for (std::size_t i = j + 1; i < n; ++i)
            if (std::fabs(W(i, j)) > std::fabs(W(piv, j))) piv = i;
        if (W(piv, j) == 0.0) return 0.0;
        if (piv != j) {
            for (std::size_t c = 0; c < n; ++c) std::swap(W(piv, c), W(j, c));
            det = -det;
        }
        det *= W(j, j);
        for (std::size_t i = j + 1; i < n; ++i) {
            const double f = W(i, j) / W(j, j);
            for (std::size_t c = j; c < n; ++c) W(i, c) -= f * W(j, c);
        }
    }
    return det;
}

} // namespace riemdiff
