#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ldfa/matrix.hpp"
#include "ldfa/svd.hpp"
#include "ldfa/trajectory.hpp"

namespace ldfa {

/// Weights expressed in the singular basis of Sigma_io = U S V^T:
/// W1 = w1b V^T, W2 = U w2b, P = pb U^T, B = bb U^T. Q lives in the hidden
/// space and is not rotated. s is the m x n rectangular diagonal of singular
/// values.
struct RotatedState {
    Matrix w1b;  // k x n
    Matrix w2b;  // m x k
    std::optional<Matrix> pb;  // r x m
    std::optional<Matrix> q;   // k x r
    std::optional<Matrix> bb;  // k x m, fixed feedback
    Matrix s;    // m x n rectangular diagonal
};

/// Which closed dynamical system to integrate.
///   FixedFeedback  forward weights only, driven by a fixed rotated feedback
///   Normative      forward weights plus factors descending |QP - W2^T|_F^2
///   LocalOja       forward weights, Oja flow on pb against S^2, Hebbian q
enum class OdeRegime { FixedFeedback, Normative, LocalOja };

struct OdeConfig {
    double dt = 1e-3;
    double tau = 1.0;
    double tau_b = 1.0;
    double lambda = 0.0;  // decay on pb, LocalOja only
    double t_end = 1.0;
    OdeRegime regime = OdeRegime::FixedFeedback;
    std::size_t record_stride = 1;
};

struct OdeSample {
    double t = 0.0;
    RotatedState state;
};

namespace detail {

struct StateDeriv {
    Matrix w1b, w2b;
    std::optional<Matrix> pb, q;
};

inline StateDeriv state_derivative(const RotatedState& y, const OdeConfig& cfg) {
    Matrix e = y.s;
    e -= matmul(y.w2b, y.w1b);  // S - W2b W1b

    StateDeriv d;
    const double inv_tau = 1.0 / cfg.tau;
    switch (cfg.regime) {
        case OdeRegime::FixedFeedback: {
            if (!y.bb) throw std::invalid_argument("integrate: FixedFeedback needs bb");
            d.w1b = matmul(*y.bb, e);
            break;
        }
        case OdeRegime::Normative: {
            if (!y.pb || !y.q) throw std::invalid_argument("integrate: Normative needs pb and q");
            d.w1b = matmul(*y.q, matmul(*y.pb, e));
            Matrix r = y.w2b.transposed();
            r -= matmul(*y.q, *y.pb);  // W2b^T - Q Pb
            Matrix dpb = matmul_tn(*y.q, r);
            dpb *= 1.0 / cfg.tau_b;
            Matrix dq = matmul_nt(r, *y.pb);
            dq *= 1.0 / cfg.tau_b;
            d.pb = std::move(dpb);
            d.q = std::move(dq);
            break;
        }
        case OdeRegime::LocalOja: {
            if (!y.pb || !y.q) throw std::invalid_argument("integrate: LocalOja needs pb and q");
            d.w1b = matmul(*y.q, matmul(*y.pb, e));
            // pb S^2 (I - pb^T pb) - lambda pb; S^2 just scales columns.
            Matrix m = *y.pb;
            for (std::size_t j = 0; j < m.cols(); ++j) {
                const double s2 = j < y.s.rows() && j < y.s.cols()
                                      ? y.s(j, j) * y.s(j, j)
                                      : 0.0;
                for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) *= s2;
            }
            Matrix dpb = m;
            dpb -= matmul(matmul_nt(m, *y.pb), *y.pb);
            if (cfg.lambda != 0.0) add_scaled(dpb, *y.pb, -cfg.lambda);
            dpb *= inv_tau;
            // W1b E^T Pb^T with E^T n x m and Pb^T m x r
            Matrix dq = matmul(y.w1b, matmul_nt(e.transposed(), *y.pb));
            dq *= inv_tau;
            d.pb = std::move(dpb);
            d.q = std::move(dq);
            break;
        }
    }
    d.w1b *= inv_tau;
    d.w2b = matmul_nt(e, y.w1b);
    d.w2b *= inv_tau;
    return d;
}

inline void axpy_state(RotatedState& y, const StateDeriv& d, double alpha) {
    add_scaled(y.w1b, d.w1b, alpha);
    add_scaled(y.w2b, d.w2b, alpha);
    if (d.pb) add_scaled(*y.pb, *d.pb, alpha);
    if (d.q) add_scaled(*y.q, *d.q, alpha);
}

inline double state_norm(const RotatedState& y) {
    double s = y.w1b.frobenius_norm() + y.w2b.frobenius_norm();
    if (y.pb) s += y.pb->frobenius_norm();
    if (y.q) s += y.q->frobenius_norm();
    return s;
}

}  // namespace detail

/// Sum of Frobenius norms of all time derivatives; zero at a stationary point.
inline double derivative_norm(const RotatedState& y, const OdeConfig& cfg) {
    const detail::StateDeriv d = detail::state_derivative(y, cfg);
    double s = d.w1b.frobenius_norm() + d.w2b.frobenius_norm();
    if (d.pb) s += d.pb->frobenius_norm();
    if (d.q) s += d.q->frobenius_norm();
    return s;
}

/// Classical RK4 with fixed step, sampled every record_stride steps (the
/// initial and final states are always included). Throws DivergenceError when
/// the state norm exceeds 1e8.
inline std::vector<OdeSample> integrate(RotatedState state, const OdeConfig& cfg) {
    if (cfg.dt <= 0.0 || cfg.tau <= 0.0 || cfg.tau_b <= 0.0)
        throw std::invalid_argument("integrate: dt, tau, tau_b must be > 0");
    const std::size_t steps =
        static_cast<std::size_t>(std::llround(cfg.t_end / cfg.dt));

    std::vector<OdeSample> samples;
    samples.push_back({0.0, state});
    for (std::size_t k = 0; k < steps; ++k) {
        const detail::StateDeriv k1 = detail::state_derivative(state, cfg);
        RotatedState y2 = state;
        detail::axpy_state(y2, k1, 0.5 * cfg.dt);
        const detail::StateDeriv k2 = detail::state_derivative(y2, cfg);
        RotatedState y3 = state;
        detail::axpy_state(y3, k2, 0.5 * cfg.dt);
        const detail::StateDeriv k3 = detail::state_derivative(y3, cfg);
        RotatedState y4 = state;
        detail::axpy_state(y4, k3, cfg.dt);
        const detail::StateDeriv k4 = detail::state_derivative(y4, cfg);

        detail::axpy_state(state, k1, cfg.dt / 6.0);
        detail::axpy_state(state, k2, cfg.dt / 3.0);
        detail::axpy_state(state, k3, cfg.dt / 3.0);
        detail::axpy_state(state, k4, cfg.dt / 6.0);

        const double t = static_cast<double>(k + 1) * cfg.dt;
        if (detail::state_norm(state) > 1e8 || !state.w1b.all_finite() ||
            !state.w2b.all_finite())
            throw DivergenceError(k, "integrate: state blew up at t = " + std::to_string(t));
        if ((k + 1) % cfg.record_stride == 0 || k + 1 == steps)
            samples.push_back({t, state});
    }
    return samples;
}

/// |B (S - W2 W1)|_F in the rotated basis; zero exactly at the stationary
/// manifold of the W1 dynamics.
inline double fixed_point_residual(const Matrix& bb_or_qp, const Matrix& s, const Matrix& w2w1) {
    Matrix e = s;
    e -= w2w1;
    return matmul(bb_or_qp, e).frobenius_norm();
}

/// Normalized mode overlaps lambda_i = u_i^T (W2 W1) v_i / s_i for every mode
/// whose singular value is above 1e-10; trailing modes below the floor are
/// skipped and counted.
struct ModeOverlaps {
    std::vector<double> lambda;
    std::size_t skipped = 0;
};

inline ModeOverlaps mode_overlaps(const Matrix& w1, const Matrix& w2, const SvdTriple& svd_io) {
    const Matrix m = matmul(w2, w1);  // m x n
    ModeOverlaps out;
    for (std::size_t i = 0; i < svd_io.s.size(); ++i) {
        if (svd_io.s[i] <= 1e-10) {
            ++out.skipped;
            continue;
        }
        double acc = 0.0;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            double mv = 0.0;
            for (std::size_t c = 0; c < m.cols(); ++c) mv += m(r, c) * svd_io.v(c, i);
            acc += svd_io.u(r, i) * mv;
        }
        out.lambda.push_back(acc / svd_io.s[i]);
    }
    return out;
}

/// Diagonal overlaps of a rotated state: (w2b w1b)_ii / s_i.
inline std::vector<double> rotated_overlaps(const RotatedState& y, std::size_t count) {
    const Matrix m = matmul(y.w2b, y.w1b);
    std::vector<double> out;
    for (std::size_t i = 0; i < count && i < std::min(m.rows(), m.cols()); ++i) {
        const double s = y.s(i, i);
        if (s <= 1e-10) break;
        out.push_back(m(i, i) / s);
    }
    return out;
}

/// Rotate original-coordinate weights into the singular basis. The thin U and
/// V from the task SVD are deterministically completed to square orthogonal
/// matrices, so rotate_out(rotate_in(.)) is the identity to round-off.
inline RotatedState rotate_in(const Matrix& w1, const Matrix& w2, const Matrix* p,
                              const SvdTriple& svd_io, const Matrix* b = nullptr,
                              const Matrix* q = nullptr) {
    const Matrix u_full = complete_orthonormal_basis(svd_io.u);
    const Matrix v_full = complete_orthonormal_basis(svd_io.v);
    RotatedState y;
    y.w1b = matmul(w1, v_full);
    y.w2b = matmul_tn(u_full, w2);
    if (p) y.pb = matmul(*p, u_full);
    if (b) y.bb = matmul(*b, u_full);
    if (q) y.q = *q;
    y.s = Matrix(u_full.rows(), v_full.rows());
    for (std::size_t i = 0; i < svd_io.s.size(); ++i) y.s(i, i) = svd_io.s[i];
    return y;
}

inline void rotate_out(const RotatedState& y, const SvdTriple& svd_io, Matrix& w1, Matrix& w2,
                       Matrix* p = nullptr) {
    const Matrix u_full = complete_orthonormal_basis(svd_io.u);
    const Matrix v_full = complete_orthonormal_basis(svd_io.v);
    w1 = matmul_nt(y.w1b, v_full);
    w2 = matmul(u_full, y.w2b);
    if (p) {
        if (!y.pb) throw std::invalid_argument("rotate_out: state has no pb");
        *p = matmul_nt(*y.pb, u_full);
    }
}

}  // namespace ldfa
