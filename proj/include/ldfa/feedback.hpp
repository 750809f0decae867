#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "ldfa/matrix.hpp"
#include "ldfa/rng.hpp"

namespace ldfa {

/// Backward pathway kinds for one feedback edge.
///   Transpose         exact W^T, read from the forward weight at call time
///   FixedRandom       fixed random B, rank capped at construction
///   FactoredNormative B = Q*P trained by gradient descent on |QP - W^T|_F^2
///   FactoredLocal     B = Q*P with P trained by an error-driven Oja rule and
///                     optionally Q by a Hebbian rule; no weight access
enum class PathwayKind { Transpose, FixedRandom, FactoredNormative, FactoredLocal };

inline const char* to_string(PathwayKind k) {
    switch (k) {
        case PathwayKind::Transpose: return "transpose";
        case PathwayKind::FixedRandom: return "fixed_random";
        case PathwayKind::FactoredNormative: return "factored_normative";
        case PathwayKind::FactoredLocal: return "factored_local";
    }
    return "?";
}

/// Hyperparameters of the feedback-factor updates. `lambda` decays P (and Q
/// when Q is trained) in the local rule; the normative rule has no decay.
/// `update_interval` spaces factor updates to every k-th training step.
struct FeedbackHyper {
    double eta_fb = 1e-2;
    double lambda = 0.0;
    std::size_t update_interval = 1;
};

/// Backward map for one layer edge. `source_layer` names the downstream layer
/// whose delta drives this pathway (the next layer for chained feedback, a
/// higher layer or the output for broadcast edges).
struct FeedbackPathway {
    PathwayKind kind = PathwayKind::Transpose;
    std::size_t rank = 0;
    std::size_t source_layer = 0;
    Matrix q;  // n_dst x rank  (factored kinds)
    Matrix p;  // rank x n_src  (factored kinds)
    Matrix b;  // n_dst x n_src (FixedRandom)
    bool update_q = false;    // FactoredLocal: train Q with the Hebbian rule
    bool use_targets = false; // FactoredLocal: drive P from targets, not deltas
    bool raw_oja = false;     // FactoredLocal: no centering, no gamma scaling
};

inline FeedbackPathway make_transpose_pathway(std::size_t source_layer) {
    FeedbackPathway pw;
    pw.kind = PathwayKind::Transpose;
    pw.source_layer = source_layer;
    return pw;
}

namespace detail {
// Kaiming-uniform factors for a backward map. P uses its fan-in n_src; Q uses
// the destination width as fan so the gain of Q*P stays O(1) at every rank
// (a rank-r fan would inflate the backward signal by sqrt(n_dst/r)).
inline Matrix init_q(Rng& rng, std::size_t n_dst, std::size_t rank) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(n_dst));
    return sample_uniform(rng, n_dst, rank, -bound, bound);
}
}  // namespace detail

/// Fixed random feedback. With rank < min(n_dst, n_src) the stored matrix is
/// a product of two Kaiming-uniform factors, so its rank is capped; it is
/// dense and never updated either way.
inline FeedbackPathway make_fixed_random_pathway(std::size_t n_dst, std::size_t n_src,
                                                 std::size_t rank, std::size_t source_layer,
                                                 Rng& rng) {
    if (rank < 1) throw std::invalid_argument("make_fixed_random_pathway: rank must be >= 1");
    FeedbackPathway pw;
    pw.kind = PathwayKind::FixedRandom;
    pw.rank = rank;
    pw.source_layer = source_layer;
    if (rank >= std::min(n_dst, n_src)) {
        pw.b = sample_kaiming_uniform(rng, n_dst, n_src);
    } else {
        const Matrix q0 = detail::init_q(rng, n_dst, rank);
        const Matrix p0 = sample_kaiming_uniform(rng, rank, n_src);
        pw.b = matmul(q0, p0);
        // rescale so the entries match the dense draw's variance
        pw.b *= std::sqrt(3.0 * static_cast<double>(n_dst) / static_cast<double>(rank));
    }
    return pw;
}

inline FeedbackPathway make_factored_normative_pathway(std::size_t n_dst, std::size_t n_src,
                                                       std::size_t rank,
                                                       std::size_t source_layer, Rng& rng) {
    if (rank < 1) throw std::invalid_argument("make_factored_normative_pathway: rank must be >= 1");
    FeedbackPathway pw;
    pw.kind = PathwayKind::FactoredNormative;
    pw.rank = rank;
    pw.source_layer = source_layer;
    pw.q = detail::init_q(rng, n_dst, rank);
    pw.p = sample_kaiming_uniform(rng, rank, n_src);
    return pw;
}

inline FeedbackPathway make_factored_local_pathway(std::size_t n_dst, std::size_t n_src,
                                                   std::size_t rank, std::size_t source_layer,
                                                   Rng& rng, bool update_q = false,
                                                   bool use_targets = false,
                                                   bool raw_oja = false) {
    if (rank < 1) throw std::invalid_argument("make_factored_local_pathway: rank must be >= 1");
    FeedbackPathway pw;
    pw.kind = PathwayKind::FactoredLocal;
    pw.rank = rank;
    pw.source_layer = source_layer;
    pw.q = detail::init_q(rng, n_dst, rank);
    pw.p = sample_kaiming_uniform(rng, rank, n_src);
    pw.update_q = update_q;
    pw.use_targets = use_targets;
    pw.raw_oja = raw_oja;
    return pw;
}

inline bool is_factored(PathwayKind k) {
    return k == PathwayKind::FactoredNormative || k == PathwayKind::FactoredLocal;
}

/// delta_dst = (B_eff * delta_src) .* preact_deriv, with B_eff = W^T, B, or
/// Q*P per kind. Factored kinds compute the two thin products P*delta then
/// Q*(.) and never materialize Q*P. `forward_w` is read only by Transpose.
inline Matrix propagate_error(const FeedbackPathway& pw, const Matrix& delta_src,
                              const Matrix& preact_deriv, const Matrix& forward_w = Matrix{},
                              MacCount* mc = nullptr) {
    if (delta_src.cols() != preact_deriv.cols())
        throw std::invalid_argument("propagate_error: batch size mismatch");
    Matrix back;
    switch (pw.kind) {
        case PathwayKind::Transpose:
            if (forward_w.rows() != delta_src.rows() || forward_w.cols() != preact_deriv.rows())
                throw std::invalid_argument("propagate_error: forward weight shape mismatch");
            back = matmul_tn(forward_w, delta_src, mc);
            break;
        case PathwayKind::FixedRandom:
            if (pw.b.cols() != delta_src.rows())
                throw std::invalid_argument("propagate_error: feedback shape mismatch");
            back = matmul(pw.b, delta_src, mc);
            break;
        case PathwayKind::FactoredNormative:
        case PathwayKind::FactoredLocal: {
            if (pw.p.cols() != delta_src.rows())
                throw std::invalid_argument("propagate_error: feedback shape mismatch");
            const Matrix compressed = matmul(pw.p, delta_src, mc);  // r x batch
            back = matmul(pw.q, compressed, mc);                    // n_dst x batch
            break;
        }
    }
    if (back.rows() != preact_deriv.rows())
        throw std::invalid_argument("propagate_error: destination dim mismatch");
    return hadamard(back, preact_deriv);
}

/// One gradient step on L_B = 1/2 |QP - W^T|_F^2. Both factors step from the
/// same residual E = W^T - QP (simultaneous, not Gauss-Seidel).
inline void update_normative(FeedbackPathway& pw, const Matrix& forward_w,
                             const FeedbackHyper& hyper, MacCount* mc = nullptr) {
    if (pw.kind != PathwayKind::FactoredNormative)
        throw std::logic_error("update_normative: pathway kind is not FactoredNormative");
    Matrix e = forward_w.transposed();
    e -= matmul(pw.q, pw.p, mc);
    const Matrix dp = matmul_tn(pw.q, e, mc);   // r x n_src
    const Matrix dq = matmul_nt(e, pw.p, mc);   // n_dst x r
    add_scaled(pw.p, dp, hyper.eta_fb);
    add_scaled(pw.q, dq, hyper.eta_fb);
}

/// 1/2 |QP - W^T|_F^2 (diagnostic).
inline double normative_loss(const FeedbackPathway& pw, const Matrix& forward_w) {
    Matrix e = forward_w.transposed();
    e -= matmul(pw.q, pw.p);
    const double f = e.frobenius_norm();
    return 0.5 * f * f;
}

namespace detail {
inline Matrix center_rows(const Matrix& m) {
    Matrix c = m;
    const double inv = 1.0 / static_cast<double>(m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double mean = 0.0;
        const double* src = m.row(i);
        for (std::size_t t = 0; t < m.cols(); ++t) mean += src[t];
        mean *= inv;
        double* dst = c.row(i);
        for (std::size_t t = 0; t < m.cols(); ++t) dst[t] -= mean;
    }
    return c;
}
}  // namespace detail

/// Synapse-local update of the factored pathway. P follows a multi-component
/// Oja rule driven by the teaching signal arriving at the source side; Q, when
/// enabled, follows a Hebbian rule on presynaptic activity and the compressed
/// teaching signal. Never reads forward weights.
///
/// Default form: the driving signal is mean-centered across the batch and the
/// error covariance is rescaled by gamma = max(diag(C)). With `raw_oja` the
/// signal is used as-is and C is averaged over the batch instead.
///
/// Returns false when the whole error batch is zero (gamma = 0); the P update
/// is skipped in that case.
inline bool update_local(FeedbackPathway& pw, const Matrix& delta_src, const Matrix& h_pre,
                         const Matrix* targets, const FeedbackHyper& hyper,
                         MacCount* mc = nullptr) {
    if (pw.kind != PathwayKind::FactoredLocal)
        throw std::logic_error("update_local: pathway kind is not FactoredLocal");
    const Matrix& drive_raw = (pw.use_targets && targets) ? *targets : delta_src;
    if (drive_raw.rows() != pw.p.cols())
        throw std::invalid_argument("update_local: driving signal dim mismatch");
    const std::size_t batch = drive_raw.cols();
    if (batch == 0) throw std::invalid_argument("update_local: empty batch");

    Matrix d = pw.raw_oja ? drive_raw : detail::center_rows(drive_raw);

    double scale;  // multiplies C = D D^T
    if (pw.raw_oja) {
        scale = 1.0 / static_cast<double>(batch);
    } else {
        double gamma = 0.0;  // max diagonal entry of C = max row sum of squares
        for (std::size_t i = 0; i < d.rows(); ++i) {
            double s = 0.0;
            const double* row = d.row(i);
            for (std::size_t t = 0; t < batch; ++t) s += row[t] * row[t];
            gamma = std::max(gamma, s);
        }
        if (gamma == 0.0) return false;  // zero error batch, nothing to learn from
        scale = 1.0 / gamma;
    }

    // P * (C/gamma) * (I - P^T P) through thin products: M = P D D^T * scale,
    // then M - (M P^T) P. Both factor increments come from the pre-update
    // factors and are applied together.
    Matrix m = matmul_nt(matmul(pw.p, d, mc), d, mc);
    m *= scale;
    const Matrix mp = matmul_nt(m, pw.p, mc);  // r x r
    Matrix dp = m;
    dp -= matmul(mp, pw.p, mc);

    Matrix dq;
    if (pw.update_q) {
        if (h_pre.cols() != delta_src.cols())
            throw std::invalid_argument("update_local: h_pre batch mismatch");
        const Matrix compressed = matmul(pw.p, delta_src, mc);  // r x batch
        dq = matmul_nt(h_pre, compressed, mc);                  // n_dst x r
        dq *= 1.0 / static_cast<double>(delta_src.cols());
    }

    if (hyper.lambda > 0.0) pw.p *= 1.0 - hyper.lambda;
    add_scaled(pw.p, dp, hyper.eta_fb);
    if (pw.update_q) {
        if (hyper.lambda > 0.0) pw.q *= 1.0 - hyper.lambda;
        add_scaled(pw.q, dq, hyper.eta_fb);
    }
    return true;
}

/// Materialize the effective backward matrix (diagnostics only).
inline Matrix effective_matrix(const FeedbackPathway& pw, const Matrix& forward_w = Matrix{}) {
    switch (pw.kind) {
        case PathwayKind::Transpose: return forward_w.transposed();
        case PathwayKind::FixedRandom: return pw.b;
        case PathwayKind::FactoredNormative:
        case PathwayKind::FactoredLocal: return matmul(pw.q, pw.p);
    }
    throw std::logic_error("effective_matrix: unknown kind");
}

}  // namespace ldfa
