#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "eclab/matrix.hpp"

namespace eclab {

struct SvdResult {
    std::vector<double> singular_values;  // descending, >= 0
    Matrix left_vectors;                  // m x n (thin U)
    Matrix right_vectors;                 // n x n (V, columns are right vectors)
};

namespace detail {

// One-sided Jacobi on a tall (m >= n) matrix: rotate column pairs of A until
// mutually orthogonal; singular values are the column norms, U the normalized
// columns, V the accumulated rotations.
inline SvdResult jacobi_svd_tall(Matrix a, int max_sweeps) {
    const std::size_t m = a.rows(), n = a.cols();
    Matrix v = Matrix::identity(n);
    const double eps = 1e-15;
    const double fro2 = a.frobenius_norm() * a.frobenius_norm();

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = a(i, p), y = a(i, q);
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                const double denom = std::sqrt(app * aqq);
                // columns annihilated by earlier rotations carry only roundoff;
                // the relative test would churn on them forever
                if (denom <= 1e-28 * fro2 || std::fabs(apq) <= eps * denom ||
                    apq == 0.0)
                    continue;
                off = std::max(off, std::fabs(apq) / std::sqrt(std::max(app * aqq, 1e-300)));

                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = a(i, p), y = a(i, q);
                    a(i, p) = c * x - s * y;
                    a(i, q) = s * x + c * y;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = v(i, p), y = v(i, q);
                    v(i, p) = c * x - s * y;
                    v(i, q) = s * x + c * y;
                }
            }
        }
        if (off == 0.0) break;
        if (sweep == max_sweeps - 1) {
            throw NumericalError("svd: one-sided Jacobi did not converge in " +
                                 std::to_string(max_sweeps) + " sweeps");
        }
    }

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += a(i, j) * a(i, j);
        sigma[j] = std::sqrt(s);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SvdResult r;
    r.singular_values.resize(n);
    r.left_vectors = Matrix(m, n);
    r.right_vectors = Matrix(n, n);
    for (std::size_t jj = 0; jj < n; ++jj) {
        const std::size_t j = order[jj];
        r.singular_values[jj] = sigma[j];
        const double inv = sigma[j] > 1e-300 ? 1.0 / sigma[j] : 0.0;
        for (std::size_t i = 0; i < m; ++i) r.left_vectors(i, jj) = a(i, j) * inv;
        for (std::size_t i = 0; i < n; ++i) r.right_vectors(i, jj) = v(i, j);
    }
    return r;
}

}  // namespace detail

/// Full SVD via one-sided Jacobi (max 64 sweeps). left * diag(s) * right^T
/// reconstructs the input. Wide matrices are handled by transposition.
inline SvdResult svd(const Matrix& m, int max_sweeps = 64) {
    if (m.empty()) throw ShapeError("svd: empty matrix");
    if (m.rows() >= m.cols()) return detail::jacobi_svd_tall(m, max_sweeps);
    SvdResult t = detail::jacobi_svd_tall(transpose(m), max_sweeps);
    std::swap(t.left_vectors, t.right_vectors);
    return t;
}

/// Largest singular value (SVD route; the oracle counterpart of power iteration).
inline double sigma_svd(const Matrix& m) {
    if (m.frobenius_norm() == 0.0) return 0.0;
    return svd(m).singular_values.front();
}

struct SymmetricEigenResult {
    std::vector<double> eigenvalues;  // descending by value
    Matrix eigenvectors;              // columns
};

/// Cyclic Jacobi eigen-decomposition for symmetric matrices. Used as the
/// independent oracle for sigma_svd^2 and for Lanczos tridiagonal solves.
inline SymmetricEigenResult symmetric_eigen(Matrix a, int max_sweeps = 100) {
    if (a.rows() != a.cols()) throw ShapeError("symmetric_eigen: matrix not square");
    const std::size_t n = a.rows();
    Matrix v = Matrix::identity(n);

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-28 * std::max(1.0, a.frobenius_norm())) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double zeta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = a(i, p), y = a(i, q);
                    a(i, p) = c * x - s * y;
                    a(i, q) = s * x + c * y;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = a(p, i), y = a(q, i);
                    a(p, i) = c * x - s * y;
                    a(q, i) = s * x + c * y;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = v(i, p), y = v(i, q);
                    v(i, p) = c * x - s * y;
                    v(i, q) = s * x + c * y;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    SymmetricEigenResult r;
    r.eigenvalues.resize(n);
    r.eigenvectors = Matrix(n, n);
    for (std::size_t jj = 0; jj < n; ++jj) {
        r.eigenvalues[jj] = a(order[jj], order[jj]);
        for (std::size_t i = 0; i < n; ++i) r.eigenvectors(i, jj) = v(i, order[jj]);
    }
    return r;
}

}  // namespace eclab
