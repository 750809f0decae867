#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "ldfa/feedback.hpp"
#include "ldfa/matrix.hpp"
#include "ldfa/metrics.hpp"
#include "ldfa/rng.hpp"
#include "ldfa/svd.hpp"

using namespace ldfa;

namespace {

Matrix ones(std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.data()) v = 1.0;
    return m;
}

double spectral_norm(const Matrix& m) { return svd(m).s[0]; }

}  // namespace

TEST_CASE("transpose propagation equals W^T delta", "[feedback]") {
    Rng rng(1);
    const Matrix w = sample_gaussian(rng, 4, 3, 1.0);       // maps h (3) to a (4)
    const Matrix delta = sample_gaussian(rng, 4, 5, 1.0);   // source delta, batch 5
    const FeedbackPathway pw = make_transpose_pathway(2);
    const Matrix out = propagate_error(pw, delta, ones(3, 5), w);
    REQUIRE((out - matmul_tn(w, delta)).max_abs() < 1e-15);
}

TEST_CASE("full-rank factorization reproduces the transpose exactly", "[feedback]") {
    Rng rng(2);
    const Matrix w = sample_gaussian(rng, 4, 6, 1.0);
    const Matrix delta = sample_gaussian(rng, 4, 3, 1.0);
    const Matrix deriv = ones(6, 3);

    FeedbackPathway pw;
    pw.kind = PathwayKind::FactoredNormative;
    pw.rank = 4;
    pw.source_layer = 2;
    pw.q = w.transposed();       // 6 x 4
    pw.p = Matrix::identity(4);  // QP = W^T
    const FeedbackPathway tp = make_transpose_pathway(2);

    const Matrix a = propagate_error(pw, delta, deriv);
    const Matrix b = propagate_error(tp, delta, deriv, w);
    REQUIRE((a - b).max_abs() < 1e-14);
}

TEST_CASE("three-unit hand example", "[feedback]") {
    FeedbackPathway pw;
    pw.kind = PathwayKind::FactoredLocal;
    pw.rank = 1;
    pw.source_layer = 2;
    pw.q = Matrix(3, 1, {1, 0, 2});
    pw.p = Matrix(1, 2, {1, 0});
    const Matrix delta(2, 1, {3, 5});
    const Matrix out = propagate_error(pw, delta, ones(3, 1));
    REQUIRE(out(0, 0) == 3.0);
    REQUIRE(out(1, 0) == 0.0);
    REQUIRE(out(2, 0) == 6.0);
    // brute-force check through the materialized product
    const Matrix direct = matmul(effective_matrix(pw), delta);
    REQUIRE((out - direct).max_abs() == 0.0);
}

TEST_CASE("propagate counts exactly the formula MACs", "[feedback]") {
    Rng rng(4);
    const std::size_t n_dst = 11, n_src = 7, r = 3, batch = 13;
    FeedbackPathway pw = make_factored_local_pathway(n_dst, n_src, r, 2, rng);
    const Matrix delta = sample_gaussian(rng, n_src, batch, 1.0);
    MacCount mc = 0;
    propagate_error(pw, delta, ones(n_dst, batch), Matrix{}, &mc);
    REQUIRE(mc == static_cast<MacCount>(r) * (n_src + n_dst) * batch);
    REQUIRE(mc == backward_flops(n_dst, n_src, pw.kind, r) * batch);

    FeedbackPathway fixed = make_fixed_random_pathway(n_dst, n_src, 7, 2, rng);
    mc = 0;
    propagate_error(fixed, delta, ones(n_dst, batch), Matrix{}, &mc);
    REQUIRE(mc == static_cast<MacCount>(n_dst) * n_src * batch);
}

TEST_CASE("normative update is stationary at QP = W^T", "[feedback]") {
    Rng rng(5);
    const Matrix w = sample_gaussian(rng, 3, 5, 1.0);
    FeedbackPathway pw;
    pw.kind = PathwayKind::FactoredNormative;
    pw.rank = 3;
    pw.source_layer = 2;
    pw.q = w.transposed();
    pw.p = Matrix::identity(3);
    const Matrix q0 = pw.q, p0 = pw.p;
    update_normative(pw, w, {0.1, 0.0, 1});
    REQUIRE((pw.q - q0).max_abs() == 0.0);
    REQUIRE((pw.p - p0).max_abs() == 0.0);
}

TEST_CASE("full-rank normative updates converge to the transpose", "[feedback]") {
    Rng rng(6);
    const Matrix w = sample_gaussian(rng, 6, 9, 1.0);
    FeedbackPathway pw = make_factored_normative_pathway(9, 6, 6, 2, rng);
    const FeedbackHyper hyper{0.02, 0.0, 1};
    for (int i = 0; i < 60000; ++i) update_normative(pw, w, hyper);
    Matrix err = w.transposed();
    err -= effective_matrix(pw);
    REQUIRE(err.frobenius_norm() < 1e-6);
    REQUIRE(2.0 * normative_loss(pw, w) <= 1e-8);  // optimum is zero at full rank
}

TEST_CASE("truncated normative updates land on the Eckart-Young optimum", "[feedback]") {
    Rng rng(7);
    const Matrix w = sample_gaussian(rng, 8, 12, 1.0);
    const std::size_t r = 3;
    FeedbackPathway pw = make_factored_normative_pathway(12, 8, r, 2, rng);
    const FeedbackHyper hyper{0.01, 0.0, 1};
    for (int i = 0; i < 200000; ++i) update_normative(pw, w, hyper);

    const SvdTriple t = svd(w);
    double tail = 0.0;
    for (std::size_t i = r; i < t.s.size(); ++i) tail += t.s[i] * t.s[i];
    Matrix err = w.transposed();
    err -= effective_matrix(pw);
    const double loss = err.frobenius_norm() * err.frobenius_norm();
    REQUIRE(std::abs(loss - tail) < 1e-6);
}

TEST_CASE("normative loss never increases below the step-size bound", "[feedback]") {
    Rng rng(8);
    const Matrix w = sample_gaussian(rng, 7, 5, 1.0);
    FeedbackPathway pw = make_factored_normative_pathway(5, 7, 3, 2, rng);
    for (int i = 0; i < 300; ++i) {
        const double s_q = spectral_norm(pw.q);
        const double s_p = spectral_norm(pw.p);
        const FeedbackHyper hyper{0.5 / (s_q * s_q + s_p * s_p + spectral_norm(w)), 0.0, 1};
        const double before = normative_loss(pw, w);
        update_normative(pw, w, hyper);
        REQUIRE(normative_loss(pw, w) <= before + 1e-12);
    }
}

TEST_CASE("oja update vanishes when C lies inside span(P^T)", "[feedback]") {
    FeedbackPathway pw;
    pw.kind = PathwayKind::FactoredLocal;
    pw.rank = 2;
    pw.source_layer = 2;
    pw.raw_oja = true;  // the algebraic fixed point, no centering
    pw.q = Matrix(3, 2);
    pw.p = Matrix(2, 4, {1, 0, 0, 0, 0, 1, 0, 0});  // orthonormal rows e1, e2
    // D with C = D D^T = diag(delta1, delta2, 0, 0)
    const Matrix d(4, 2, {2, 0, 0, 1.5, 0, 0, 0, 0});
    const Matrix p0 = pw.p;
    update_local(pw, d, Matrix(3, 2), nullptr, {0.1, 0.0, 1});
    REQUIRE((pw.p - p0).max_abs() < 1e-15);
}

TEST_CASE("oja iteration converges to the top-r eigenspace", "[feedback]") {
    Rng rng(9);
    const std::size_t m = 5, r = 2;
    // C = R diag(9, 6.25, 4, 1, 0.25) R^T / batch through D = R diag(3,2.5,2,1,0.5)
    const SvdTriple rot = svd(sample_gaussian(rng, m, m, 1.0));
    Matrix d = rot.u;
    const double scales[5] = {3.0, 2.5, 2.0, 1.0, 0.5};
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < m; ++i) d(i, j) *= scales[j];

    FeedbackPathway pw = make_factored_local_pathway(4, m, r, 2, rng, false, false, true);
    const FeedbackHyper hyper{0.05, 0.0, 1};
    for (int i = 0; i < 20000; ++i) update_local(pw, d, Matrix(4, m), nullptr, hyper);

    Matrix gram = matmul_nt(pw.p, pw.p);
    gram -= Matrix::identity(r);
    REQUIRE(gram.frobenius_norm() < 1e-4);

    // independent oracle: Eigen eigendecomposition of C
    Eigen::MatrixXd c(m, m);
    const Matrix cm = matmul_nt(d, d);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) c(i, j) = cm(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
    Matrix ref(m, r);  // top-r eigenvectors (Eigen sorts ascending)
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < r; ++j) ref(i, j) = eig.eigenvectors()(i, m - 1 - j);

    const SubspaceAlignment al = subspace_alignment(pw.p, ref);
    REQUIRE(al.principal_angles.back() < 1e-3);
}

TEST_CASE("gamma normalization makes the oja step scale invariant", "[feedback]") {
    Rng rng(10);
    FeedbackPathway a = make_factored_local_pathway(3, 4, 2, 2, rng);
    FeedbackPathway b = a;
    const Matrix d = sample_gaussian(rng, 4, 6, 1.0);
    Matrix d10 = d;
    d10 *= 10.0;
    update_local(a, d, Matrix(3, 6), nullptr, {0.05, 0.0, 1});
    update_local(b, d10, Matrix(3, 6), nullptr, {0.05, 0.0, 1});
    REQUIRE((a.p - b.p).max_abs() < 1e-12);
}

TEST_CASE("a zero error batch is skipped with a diagnostic", "[feedback]") {
    Rng rng(11);
    FeedbackPathway pw = make_factored_local_pathway(3, 4, 2, 2, rng, true);
    const Matrix p0 = pw.p, q0 = pw.q;
    const bool applied = update_local(pw, Matrix(4, 5), Matrix(3, 5), nullptr, {0.1, 0.01, 1});
    REQUIRE_FALSE(applied);
    REQUIRE((pw.p - p0).max_abs() == 0.0);
    REQUIRE((pw.q - q0).max_abs() == 0.0);
}

TEST_CASE("hebbian Q update matches its outer-product formula", "[feedback]") {
    Rng rng(12);
    FeedbackPathway pw = make_factored_local_pathway(3, 4, 2, 2, rng, true);
    const Matrix q0 = pw.q, p0 = pw.p;
    const Matrix delta = sample_gaussian(rng, 4, 6, 1.0);
    const Matrix h = sample_gaussian(rng, 3, 6, 1.0);
    const FeedbackHyper hyper{0.05, 0.0, 1};
    update_local(pw, delta, h, nullptr, hyper);
    Matrix expect = matmul_nt(h, matmul(p0, delta));
    expect *= hyper.eta_fb / 6.0;
    REQUIRE((pw.q - (q0 + expect)).max_abs() < 1e-14);

    FeedbackPathway frozen = make_factored_local_pathway(3, 4, 2, 2, rng, false);
    const Matrix fq = frozen.q;
    update_local(frozen, delta, h, nullptr, hyper);
    REQUIRE((frozen.q - fq).max_abs() == 0.0);  // update_q off leaves Q untouched
}

TEST_CASE("use_targets drives P from the targets instead of the delta", "[feedback]") {
    Rng rng(13);
    FeedbackPathway a = make_factored_local_pathway(3, 4, 2, 2, rng, false, true);
    FeedbackPathway b = a;
    b.use_targets = false;
    const Matrix delta = sample_gaussian(rng, 4, 6, 1.0);
    const Matrix targets = sample_gaussian(rng, 4, 6, 2.0);
    update_local(a, delta, Matrix(3, 6), &targets, {0.05, 0.0, 1});
    update_local(b, targets, Matrix(3, 6), nullptr, {0.05, 0.0, 1});
    REQUIRE((a.p - b.p).max_abs() == 0.0);
}

TEST_CASE("factored rank bound survives arbitrary update sequences", "[feedback]") {
    Rng rng(14);
    const std::size_t r = 2;
    FeedbackPathway pw = make_factored_local_pathway(6, 5, r, 2, rng, true);
    const FeedbackHyper hyper{0.05, 0.001, 1};
    for (int i = 0; i < 50; ++i) {
        const Matrix delta = sample_gaussian(rng, 5, 4, 1.0);
        const Matrix h = sample_gaussian(rng, 6, 4, 1.0);
        update_local(pw, delta, h, nullptr, hyper);
    }
    const SvdTriple t = svd(effective_matrix(pw));
    REQUIRE(numerical_rank(t.s, 1e-8) <= r);
}

TEST_CASE("updates are pure functions of their arguments", "[feedback]") {
    // update_normative sees only (pathway, W); update_local sees only
    // (pathway, deltas, activations, targets). Same inputs, same outputs.
    Rng rng(15);
    const Matrix w = sample_gaussian(rng, 4, 5, 1.0);
    FeedbackPathway a = make_factored_normative_pathway(5, 4, 2, 2, rng);
    FeedbackPathway b = a;
    update_normative(a, w, {0.03, 0.0, 1});
    update_normative(b, w, {0.03, 0.0, 1});
    REQUIRE(a.q.data() == b.q.data());
    REQUIRE(a.p.data() == b.p.data());
}

TEST_CASE("kind misuse is rejected", "[feedback]") {
    Rng rng(16);
    FeedbackPathway fixed = make_fixed_random_pathway(3, 4, 2, 2, rng);
    REQUIRE_THROWS_AS(update_normative(fixed, Matrix(4, 3), {0.1, 0.0, 1}), std::logic_error);
    REQUIRE_THROWS_AS(update_local(fixed, Matrix(4, 1), Matrix(3, 1), nullptr, {0.1, 0.0, 1}),
                      std::logic_error);
}

TEST_CASE("effective matrix materializations", "[feedback]") {
    Rng rng(17);
    const Matrix w = sample_gaussian(rng, 2, 3, 1.0);
    REQUIRE((effective_matrix(make_transpose_pathway(2), w) - w.transposed()).max_abs() == 0.0);

    FeedbackPathway pw;
    pw.kind = PathwayKind::FactoredLocal;
    pw.rank = 1;
    pw.q = Matrix(2, 1, {1, 2});
    pw.p = Matrix(1, 2, {3, 4});
    const Matrix eff = effective_matrix(pw);
    REQUIRE(eff(0, 0) == 3.0);
    REQUIRE(eff(0, 1) == 4.0);
    REQUIRE(eff(1, 0) == 6.0);
    REQUIRE(eff(1, 1) == 8.0);

    FeedbackPathway fixed = make_fixed_random_pathway(3, 4, 2, 2, rng);
    const Matrix b1 = effective_matrix(fixed);
    const Matrix b2 = effective_matrix(fixed);
    REQUIRE(b1.data() == b2.data());
    const SvdTriple t = svd(b1);
    REQUIRE(numerical_rank(t.s, 1e-8) == 2);  // capped at construction
}
