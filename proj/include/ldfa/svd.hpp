#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ldfa/matrix.hpp"

namespace ldfa {

/// Thin singular value decomposition M = U diag(s) V^T with q = min(rows, cols)
/// columns in U and V and s sorted nonincreasing.
struct SvdTriple {
    Matrix u;               // rows x q, orthonormal columns
    std::vector<double> s;  // q singular values, nonincreasing, nonnegative
    Matrix v;               // cols x q, orthonormal columns
};

namespace detail {

// One-sided Jacobi (Hestenes) on a tall matrix, m >= n. Works on g = a^T so
// that the columns being orthogonalized are contiguous rows. vt accumulates
// the right rotations, also as rows.
inline void jacobi_orthogonalize(Matrix& g, Matrix& vt) {
    const std::size_t n = g.rows();
    const std::size_t m = g.cols();
    constexpr double tol = 1e-14;
    constexpr int max_sweeps = 60;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double* gi = g.row(i);
                double* gj = g.row(j);
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t l = 0; l < m; ++l) {
                    alpha += gi[l] * gi[l];
                    beta += gj[l] * gj[l];
                    gamma += gi[l] * gj[l];
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;

                for (std::size_t l = 0; l < m; ++l) {
                    const double x = gi[l], y = gj[l];
                    gi[l] = c * x - s * y;
                    gj[l] = s * x + c * y;
                }
                double* vi = vt.row(i);
                double* vj = vt.row(j);
                for (std::size_t l = 0; l < n; ++l) {
                    const double x = vi[l], y = vj[l];
                    vi[l] = c * x - s * y;
                    vj[l] = s * x + c * y;
                }
            }
        }
        if (!rotated) break;
    }
}

// Gram-Schmidt a canonical basis vector against the first `filled` columns of
// u, twice for stability. Returns false if the candidate is degenerate.
inline bool orthonormalize_candidate(Matrix& u, std::size_t filled, std::size_t col,
                                     std::size_t cand) {
    const std::size_t m = u.rows();
    std::vector<double> w(m, 0.0);
    w[cand] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < filled; ++k) {
            if (k == col) continue;
            double dot = 0.0;
            for (std::size_t i = 0; i < m; ++i) dot += w[i] * u(i, k);
            for (std::size_t i = 0; i < m; ++i) w[i] -= dot * u(i, k);
        }
    }
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 0.3) return false;
    for (std::size_t i = 0; i < m; ++i) u(i, col) = w[i] / norm;
    return true;
}

inline SvdTriple svd_tall(const Matrix& a) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();
    Matrix g = a.transposed();  // n x m, row i = column i of a
    Matrix vt = Matrix::identity(n);
    jacobi_orthogonalize(g, vt);

    std::vector<double> sigma(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        const double* gi = g.row(i);
        for (std::size_t l = 0; l < m; ++l) s += gi[l] * gi[l];
        sigma[i] = std::sqrt(s);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SvdTriple out;
    out.s.resize(n);
    out.u = Matrix(m, n);
    out.v = Matrix(n, n);
    const double smax = sigma[order[0]];
    const double tiny = smax * 1e-13 * static_cast<double>(std::max(m, n));

    std::vector<std::size_t> deficient;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t src = order[k];
        out.s[k] = sigma[src];
        for (std::size_t i = 0; i < n; ++i) out.v(i, k) = vt(src, i);
        if (sigma[src] > tiny && sigma[src] > 0.0) {
            const double inv = 1.0 / sigma[src];
            const double* gs = g.row(src);
            for (std::size_t i = 0; i < m; ++i) out.u(i, k) = gs[i] * inv;
        } else {
            deficient.push_back(k);
        }
    }
    // Columns with (numerically) zero singular value get an orthonormal
    // completion so U^T U = I holds even for rank-deficient input.
    for (std::size_t col : deficient) {
        bool ok = false;
        for (std::size_t cand = 0; cand < m && !ok; ++cand)
            ok = orthonormalize_candidate(out.u, n, col, cand);
        if (!ok) throw std::logic_error("svd: failed to complete left basis");
    }
    return out;
}

}  // namespace detail

/// SVD of a dense matrix. Sign convention: the largest-magnitude entry of each
/// left singular vector is forced nonnegative so fixtures are stable.
inline SvdTriple svd(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) throw std::invalid_argument("svd: empty matrix");
    if (!m.all_finite()) throw std::invalid_argument("svd: input has non-finite entries");

    SvdTriple t;
    if (m.rows() >= m.cols()) {
        t = detail::svd_tall(m);
    } else {
        SvdTriple tt = detail::svd_tall(m.transposed());
        t.u = std::move(tt.v);
        t.s = std::move(tt.s);
        t.v = std::move(tt.u);
    }
    for (std::size_t k = 0; k < t.s.size(); ++k) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < t.u.rows(); ++i) {
            const double a = std::abs(t.u(i, k));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (t.u(arg, k) < 0.0) {
            for (std::size_t i = 0; i < t.u.rows(); ++i) t.u(i, k) = -t.u(i, k);
            for (std::size_t i = 0; i < t.v.rows(); ++i) t.v(i, k) = -t.v(i, k);
        }
    }
    return t;
}

inline Matrix svd_reconstruct(const SvdTriple& t) {
    Matrix us = t.u;
    for (std::size_t j = 0; j < t.s.size(); ++j)
        for (std::size_t i = 0; i < us.rows(); ++i) us(i, j) *= t.s[j];
    return matmul_nt(us, t.v);
}

/// Number of singular values above rel_tol * s[0].
inline std::size_t numerical_rank(const std::vector<double>& s, double rel_tol = 1e-8) {
    if (s.empty()) return 0;
    const double thresh = rel_tol * s[0];
    std::size_t r = 0;
    for (double v : s)
        if (v > thresh) ++r;
    return r;
}

/// Extends a matrix with orthonormal columns to a full square orthogonal
/// matrix by deterministic Gram-Schmidt over the canonical basis.
inline Matrix complete_orthonormal_basis(const Matrix& q) {
    const std::size_t n = q.rows();
    const std::size_t k = q.cols();
    if (k > n) throw std::invalid_argument("complete_orthonormal_basis: more columns than rows");
    Matrix full(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) full(i, j) = q(i, j);
    std::size_t filled = k;
    for (std::size_t cand = 0; cand < n && filled < n; ++cand) {
        if (detail::orthonormalize_candidate(full, filled, filled, cand)) ++filled;
    }
    if (filled != n) throw std::logic_error("complete_orthonormal_basis: completion failed");
    return full;
}

}  // namespace ldfa
