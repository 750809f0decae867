#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ldfa/network.hpp"
#include "ldfa/rng.hpp"
#include "ldfa/svd.hpp"
#include "ldfa/theory.hpp"

using namespace ldfa;

namespace {

Matrix rect_diag(std::size_t m, std::size_t n, const std::vector<double>& vals) {
    Matrix s(m, n);
    for (std::size_t i = 0; i < vals.size(); ++i) s(i, i) = vals[i];
    return s;
}

RotatedState fixed_feedback_state(Rng& rng, std::size_t n, std::size_t k, std::size_t m,
                                  const std::vector<double>& svals, double init_sigma) {
    RotatedState y;
    y.w1b = sample_gaussian(rng, k, n, init_sigma);
    y.w2b = sample_gaussian(rng, m, k, init_sigma);
    y.bb = sample_gaussian(rng, k, m, 0.5);
    y.s = rect_diag(m, n, svals);
    return y;
}

}  // namespace

TEST_CASE("full-rank fixed feedback converges to the backprop solution", "[theory]") {
    Rng rng(1);
    RotatedState y = fixed_feedback_state(rng, 8, 6, 6, {2.0, 1.5, 1.2, 0.9, 0.5, 0.3}, 1e-3);
    OdeConfig cfg;
    cfg.regime = OdeRegime::FixedFeedback;
    cfg.dt = 5e-3;
    cfg.t_end = 120.0;
    cfg.record_stride = 1000;
    const auto samples = integrate(y, cfg);
    const RotatedState& end = samples.back().state;
    Matrix prod = matmul(end.w2b, end.w1b);
    prod -= end.s;
    REQUIRE(prod.frobenius_norm() < 1e-3);
}

TEST_CASE("halving dt changes the terminal state by less than 1e-4", "[theory]") {
    Rng rng(2);
    const RotatedState y0 =
        fixed_feedback_state(rng, 6, 5, 4, {1.8, 1.1, 0.7, 0.4}, 1e-3);
    OdeConfig cfg;
    cfg.regime = OdeRegime::FixedFeedback;
    cfg.dt = 2e-2;
    cfg.t_end = 30.0;
    cfg.record_stride = 100000;
    const RotatedState a = integrate(y0, cfg).back().state;
    cfg.dt = 1e-2;
    const RotatedState b = integrate(y0, cfg).back().state;
    REQUIRE((a.w1b - b.w1b).max_abs() < 1e-4);
    REQUIRE((a.w2b - b.w2b).max_abs() < 1e-4);
}

TEST_CASE("local oja flow orthonormalizes pb onto the top-r modes", "[theory]") {
    Rng rng(3);
    const std::size_t n = 5, k = 4, m = 5, r = 2;
    RotatedState y;
    y.w1b = sample_gaussian(rng, k, n, 1e-3);
    y.w2b = sample_gaussian(rng, m, k, 1e-3);
    y.pb = sample_gaussian(rng, r, m, 0.3);
    y.q = sample_gaussian(rng, k, r, 0.3);
    y.s = rect_diag(m, n, {2.0, 1.5, 1.0, 0.7, 0.3});

    OdeConfig cfg;
    cfg.regime = OdeRegime::LocalOja;
    cfg.dt = 5e-3;
    cfg.t_end = 80.0;
    cfg.lambda = 0.0;
    cfg.record_stride = 100000;
    const RotatedState end = integrate(y, cfg).back().state;

    Matrix gram = matmul_nt(*end.pb, *end.pb);
    gram -= Matrix::identity(r);
    REQUIRE(gram.frobenius_norm() < 1e-4);

    // top-r subspace of a diagonal S is the leading identity block
    Matrix ref(m, r);
    ref(0, 0) = 1.0;
    ref(1, 1) = 1.0;
    const SubspaceAlignment al = subspace_alignment(*end.pb, ref);
    REQUIRE(al.principal_angles.back() < 1e-3);
}

TEST_CASE("fixed point residual examples", "[theory]") {
    // exact solution
    const Matrix s = rect_diag(2, 2, {2.0, 1.0});
    REQUIRE(fixed_point_residual(Matrix::identity(2), s, s) == 0.0);

    // rank-1 feedback spanning mode 1 only, mismatch confined to mode 2:
    // residual vanishes although W2 W1 != S
    Matrix bb(2, 2);
    bb(0, 0) = 1.0;
    Matrix w2w1 = s;
    w2w1(1, 1) = 0.25;  // wrong second mode
    REQUIRE(fixed_point_residual(bb, s, w2w1) == 0.0);
    REQUIRE((s - w2w1).frobenius_norm() > 0.1);

    // generic full-rank feedback sees the mismatch
    Rng rng(4);
    const Matrix full = sample_gaussian(rng, 2, 2, 1.0);
    REQUIRE(fixed_point_residual(full, s, w2w1) > 0.0);
}

TEST_CASE("mode overlaps on constructed weight products", "[theory]") {
    Rng rng(5);
    const Matrix m = sample_gaussian(rng, 6, 9, 1.0);
    const SvdTriple t = svd(m);

    // W2 W1 = U S V^T reconstruction: all overlaps 1
    const Matrix w2 = t.u;                       // 6 x 6
    Matrix w1(6, 9);                             // S V^T
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 9; ++j) w1(i, j) = t.s[i] * t.v(j, i);
    const ModeOverlaps mo = mode_overlaps(w1, w2, t);
    REQUIRE(mo.lambda.size() == 6);
    for (double l : mo.lambda) REQUIRE(l == Catch::Approx(1.0).margin(1e-10));

    // zero weights: all overlaps 0
    const ModeOverlaps zero = mode_overlaps(Matrix(6, 9), Matrix(6, 6), t);
    for (double l : zero.lambda) REQUIRE(l == 0.0);

    // doubling the product doubles every overlap
    Matrix w1x2 = w1;
    w1x2 *= 2.0;
    for (double l : mode_overlaps(w1x2, w2, t).lambda)
        REQUIRE(l == Catch::Approx(2.0).margin(1e-10));
}

TEST_CASE("modes below the singular value floor are skipped and flagged", "[theory]") {
    SvdTriple t;
    t.u = Matrix::identity(3);
    t.v = Matrix::identity(3);
    t.s = {2.0, 1e-12, 0.0};
    const ModeOverlaps mo = mode_overlaps(Matrix::identity(3), Matrix::identity(3), t);
    REQUIRE(mo.lambda.size() == 1);
    REQUIRE(mo.skipped == 2);
}

TEST_CASE("rotations round-trip to 1e-12", "[theory]") {
    Rng rng(6);
    const Matrix sigma = sample_gaussian(rng, 6, 9, 1.0);
    const SvdTriple t = svd(sigma);

    const Matrix w1 = sample_gaussian(rng, 4, 9, 1.0);
    const Matrix w2 = sample_gaussian(rng, 6, 4, 1.0);
    const Matrix p = sample_gaussian(rng, 3, 6, 1.0);

    const RotatedState y = rotate_in(w1, w2, &p, t);
    REQUIRE(y.w1b.rows() == 4);
    REQUIRE(y.w1b.cols() == 9);
    REQUIRE(y.s.rows() == 6);
    REQUIRE(y.s.cols() == 9);

    Matrix w1_back, w2_back, p_back;
    rotate_out(y, t, w1_back, w2_back, &p_back);
    REQUIRE((w1_back - w1).max_abs() < 1e-12);
    REQUIRE((w2_back - w2).max_abs() < 1e-12);
    REQUIRE((p_back - p).max_abs() < 1e-12);
}

TEST_CASE("identity singular vectors make the rotation the identity", "[theory]") {
    const SvdTriple t = svd(Matrix::identity(4));
    Rng rng(7);
    const Matrix w1 = sample_gaussian(rng, 3, 4, 1.0);
    const Matrix w2 = sample_gaussian(rng, 4, 3, 1.0);
    const RotatedState y = rotate_in(w1, w2, nullptr, t);
    REQUIRE((y.w1b - w1).max_abs() < 1e-14);
    REQUIRE((y.w2b - w2).max_abs() < 1e-14);
}

TEST_CASE("constructed spurious fixed point: residual vanishes, mode 2 stays wrong",
          "[theory]") {
    RotatedState y;
    y.w1b = Matrix(2, 2);
    y.w1b(0, 0) = 1e-2;
    y.w1b(1, 1) = 1e-2;
    y.w2b = y.w1b;
    Matrix bb(2, 2);
    bb(0, 0) = 1.0;  // rank-1 feedback spanning mode 1 only
    y.bb = bb;
    y.s = rect_diag(2, 2, {2.0, 1.0});

    OdeConfig cfg;
    cfg.regime = OdeRegime::FixedFeedback;
    cfg.dt = 1e-2;
    cfg.t_end = 60.0;
    cfg.record_stride = 100000;
    const RotatedState end = integrate(y, cfg).back().state;

    const Matrix prod = matmul(end.w2b, end.w1b);
    const double residual = fixed_point_residual(*end.bb, end.s, prod);
    REQUIRE(residual < 1e-8);

    const double lambda2 = prod(1, 1) / end.s(1, 1);
    REQUIRE(std::abs(lambda2 - 1.0) > 0.1);  // spurious: mode 2 never recovered
    const double lambda1 = prod(0, 0) / end.s(0, 0);
    REQUIRE(lambda1 == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("stationarity of the w1 flow is exactly the residual", "[theory]") {
    Rng rng(8);
    RotatedState y = fixed_feedback_state(rng, 5, 4, 4, {1.5, 1.0, 0.6, 0.2}, 0.05);
    OdeConfig cfg;
    cfg.regime = OdeRegime::FixedFeedback;
    cfg.dt = 1e-2;
    cfg.t_end = 0.5;
    cfg.tau = 2.0;
    cfg.record_stride = 10;
    for (const OdeSample& sm : integrate(y, cfg)) {
        const Matrix prod = matmul(sm.state.w2b, sm.state.w1b);
        const double residual = fixed_point_residual(*sm.state.bb, sm.state.s, prod);
        // tau * dW1/dt = bb (S - W2 W1), so the flow magnitude matches the residual
        Matrix e = sm.state.s;
        e -= prod;
        const double flow = matmul(*sm.state.bb, e).frobenius_norm() / cfg.tau;
        REQUIRE(flow * cfg.tau == Catch::Approx(residual).margin(1e-12));
    }
}

TEST_CASE("blow-up raises a divergence report with the failure time", "[theory]") {
    RotatedState y;
    y.w1b = Matrix(1, 1, {10.0});
    y.w2b = Matrix(1, 1, {10.0});
    y.bb = Matrix(1, 1, {1.0});
    y.s = Matrix(1, 1, {-1e4});  // strong repulsive drive
    OdeConfig cfg;
    cfg.regime = OdeRegime::FixedFeedback;
    cfg.dt = 1.0;
    cfg.t_end = 100.0;
    REQUIRE_THROWS_AS(integrate(y, cfg), DivergenceError);
}

TEST_CASE("discrete simulation tracks the integrated dynamics", "[theory]") {
    // the module's core purpose: rotate the discrete run into the singular
    // basis and compare against the ODE at matched times
    const LinearTask task = make_linear_task(12, 8, 3, 256, 0.2, 42, true);
    Rng rng(42);
    Network net = make_mlp({12, 8, 8}, {ActivationKind::Linear, ActivationKind::Linear},
                           LossKind::SquaredError, {InitSpec::Kind::Gaussian, 1e-3}, rng);
    Rng pw_rng(43);
    net.pathways.push_back(make_fixed_random_pathway(8, 8, 8, 2, pw_rng));

    const SvdTriple svd_io = svd(input_output_covariance(task));
    const RotatedState y0 =
        rotate_in(net.layers[0].w, net.layers[1].w, nullptr, svd_io, &net.pathways[0].b);

    TrainConfig cfg;
    cfg.eta = 2e-4;
    cfg.steps = 4000;
    cfg.record_every = 200;
    cfg.n_modes = 3;
    const Trajectory sim = train(net, task, cfg);

    OdeConfig ode;
    ode.regime = OdeRegime::FixedFeedback;
    ode.dt = 1e-3;
    ode.t_end = cfg.eta * static_cast<double>(cfg.steps);
    ode.record_stride = 1;
    const auto samples = integrate(y0, ode);

    for (const TrajectoryRecord& rec : sim.records) {
        // nearest ODE sample (grids align by construction)
        const std::size_t idx = static_cast<std::size_t>(std::llround(rec.time / ode.dt));
        REQUIRE(idx < samples.size());
        const std::vector<double> theory = rotated_overlaps(samples[idx].state, 3);
        for (std::size_t i = 0; i < rec.lambdas.size(); ++i)
            REQUIRE(std::abs(rec.lambdas[i] - theory[i]) <= 0.05);
    }
}
