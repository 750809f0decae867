#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ldfa/feedback.hpp"
#include "ldfa/matrix.hpp"
#include "ldfa/metrics.hpp"
#include "ldfa/rng.hpp"
#include "ldfa/task.hpp"
#include "ldfa/theory.hpp"
#include "ldfa/trajectory.hpp"

namespace ldfa {

enum class ActivationKind { Linear, Relu, Tanh };
enum class LossKind { SquaredError, CrossEntropySoftmax };

inline const char* to_string(ActivationKind k) {
    switch (k) {
        case ActivationKind::Linear: return "linear";
        case ActivationKind::Relu: return "relu";
        case ActivationKind::Tanh: return "tanh";
    }
    return "?";
}

inline Matrix apply_activation(ActivationKind k, const Matrix& a) {
    Matrix h = a;
    switch (k) {
        case ActivationKind::Linear: break;
        case ActivationKind::Relu:
            for (double& v : h.data()) v = v > 0.0 ? v : 0.0;
            break;
        case ActivationKind::Tanh:
            for (double& v : h.data()) v = std::tanh(v);
            break;
    }
    return h;
}

/// f'(a) elementwise; Relu uses the right derivative at 0.
inline Matrix activation_derivative(ActivationKind k, const Matrix& a) {
    Matrix d(a.rows(), a.cols());
    switch (k) {
        case ActivationKind::Linear:
            for (double& v : d.data()) v = 1.0;
            break;
        case ActivationKind::Relu:
            for (std::size_t i = 0; i < a.size(); ++i)
                d.data()[i] = a.data()[i] > 0.0 ? 1.0 : 0.0;
            break;
        case ActivationKind::Tanh:
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double t = std::tanh(a.data()[i]);
                d.data()[i] = 1.0 - t * t;
            }
            break;
    }
    return d;
}

struct Layer {
    Matrix w;  // width(l+1) x width(l)
    ActivationKind activation = ActivationKind::Linear;
};

/// Multilayer perceptron with decoupled forward and backward passes. Layer j
/// maps h_j to a_{j+1} through w; hidden layers 1..L-1 each own one feedback
/// pathway (pathways[l-1] delivers delta_l). The output layer receives the
/// loss gradient directly and has no pathway. No bias terms.
struct Network {
    std::vector<Layer> layers;
    std::vector<FeedbackPathway> pathways;
    LossKind loss = LossKind::SquaredError;

    std::size_t depth() const { return layers.size(); }
    std::size_t width(std::size_t l) const {
        return l == 0 ? layers.at(0).w.cols() : layers.at(l - 1).w.rows();
    }
    std::size_t input_dim() const { return width(0); }
    std::size_t output_dim() const { return width(depth()); }
};

struct InitSpec {
    enum class Kind { Kaiming, Gaussian };
    Kind kind = Kind::Kaiming;
    double sigma = 1e-3;  // Gaussian only
};

inline Network make_mlp(const std::vector<std::size_t>& widths,
                        const std::vector<ActivationKind>& activations, LossKind loss,
                        const InitSpec& init, Rng& rng) {
    if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least one layer");
    if (activations.size() != widths.size() - 1)
        throw std::invalid_argument("make_mlp: one activation per layer expected");
    Network net;
    net.loss = loss;
    for (std::size_t j = 0; j + 1 < widths.size(); ++j) {
        Layer lay;
        lay.w = init.kind == InitSpec::Kind::Kaiming
                    ? sample_kaiming_uniform(rng, widths[j + 1], widths[j])
                    : sample_gaussian(rng, widths[j + 1], widths[j], init.sigma);
        lay.activation = activations[j];
        net.layers.push_back(std::move(lay));
    }
    return net;
}

/// Chained exact-transpose pathways for every hidden layer.
inline void attach_transpose_pathways(Network& net) {
    net.pathways.clear();
    for (std::size_t l = 1; l < net.depth(); ++l)
        net.pathways.push_back(make_transpose_pathway(l + 1));
}

inline void validate_network(const Network& net) {
    const std::size_t depth = net.depth();
    if (depth == 0) throw std::invalid_argument("network: no layers");
    for (std::size_t j = 0; j + 1 < depth; ++j) {
        if (net.layers[j + 1].w.cols() != net.layers[j].w.rows())
            throw std::invalid_argument("network: layer " + std::to_string(j + 1) +
                                        " input dim does not chain");
    }
    if (net.pathways.size() != depth - 1)
        throw std::invalid_argument("network: expected one pathway per hidden layer");
    for (std::size_t l = 1; l < depth; ++l) {
        const FeedbackPathway& pw = net.pathways[l - 1];
        if (pw.source_layer <= l || pw.source_layer > depth)
            throw std::invalid_argument("network: pathway " + std::to_string(l) +
                                        " has source_layer " + std::to_string(pw.source_layer) +
                                        " outside (" + std::to_string(l) + ", " +
                                        std::to_string(depth) + "]");
        if (pw.kind == PathwayKind::Transpose && pw.source_layer != l + 1)
            throw std::invalid_argument("network: transpose pathways must chain to the next layer");
        const std::size_t n_dst = net.width(l);
        const std::size_t n_src = net.width(pw.source_layer);
        if (pw.kind == PathwayKind::FixedRandom &&
            (pw.b.rows() != n_dst || pw.b.cols() != n_src))
            throw std::invalid_argument("network: fixed feedback shape mismatch at layer " +
                                        std::to_string(l));
        if (is_factored(pw.kind) &&
            (pw.q.rows() != n_dst || pw.q.cols() != pw.rank || pw.p.rows() != pw.rank ||
             pw.p.cols() != n_src))
            throw std::invalid_argument("network: factored feedback shape mismatch at layer " +
                                        std::to_string(l));
    }
}

struct ForwardCache {
    Matrix x;                    // h_0
    std::vector<Matrix> preact;  // a_1 .. a_L
    std::vector<Matrix> act;     // h_1 .. h_L
};

inline ForwardCache forward(const Network& net, const Matrix& x, MacCount* mc = nullptr) {
    if (x.rows() != net.input_dim())
        throw std::invalid_argument("forward: input dim " + std::to_string(x.rows()) +
                                    " != " + std::to_string(net.input_dim()));
    ForwardCache cache;
    cache.x = x;
    const Matrix* h = &cache.x;
    for (const Layer& lay : net.layers) {
        cache.preact.push_back(matmul(lay.w, *h, mc));
        cache.act.push_back(apply_activation(lay.activation, cache.preact.back()));
        h = &cache.act.back();
    }
    return cache;
}

namespace detail {
inline Matrix softmax_columns(const Matrix& a) {
    Matrix s = a;
    for (std::size_t t = 0; t < a.cols(); ++t) {
        double mx = -1e300;
        for (std::size_t i = 0; i < a.rows(); ++i) mx = std::max(mx, a(i, t));
        double z = 0.0;
        for (std::size_t i = 0; i < a.rows(); ++i) z += std::exp(a(i, t) - mx);
        for (std::size_t i = 0; i < a.rows(); ++i)
            s(i, t) = std::exp(a(i, t) - mx) / z;
    }
    return s;
}
}  // namespace detail

inline double loss_value(const Network& net, const ForwardCache& cache, const Matrix& targets) {
    const Matrix& out = cache.act.back();
    if (out.rows() != targets.rows() || out.cols() != targets.cols())
        throw std::invalid_argument("loss_value: target shape mismatch");
    const double inv_b = 1.0 / static_cast<double>(out.cols());
    if (net.loss == LossKind::SquaredError) {
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double e = out.data()[i] - targets.data()[i];
            s += e * e;
        }
        return 0.5 * inv_b * s;
    }
    const Matrix sm = detail::softmax_columns(cache.preact.back());
    double s = 0.0;
    for (std::size_t t = 0; t < sm.cols(); ++t)
        for (std::size_t i = 0; i < sm.rows(); ++i)
            if (targets(i, t) != 0.0) s -= targets(i, t) * std::log(std::max(sm(i, t), 1e-300));
    return inv_b * s;
}

/// Deltas for every layer, deltas[l-1] = delta_l. The sign convention is the
/// descent direction: delta_L = (y - yhat) .* f'(a_L) / batch, so weight
/// updates add eta * delta * h^T. Hidden deltas come from each layer's
/// pathway, reading the delta of its source layer (chained or broadcast).
inline std::vector<Matrix> backward(const Network& net, const ForwardCache& cache,
                                    const Matrix& targets, MacCount* mc = nullptr) {
    const std::size_t depth = net.depth();
    std::vector<Matrix> deltas(depth);
    const Matrix& a_out = cache.preact.back();
    const Matrix& h_out = cache.act.back();
    const double inv_b = 1.0 / static_cast<double>(a_out.cols());

    if (net.loss == LossKind::SquaredError) {
        Matrix err = targets;
        err -= h_out;
        err *= inv_b;
        deltas[depth - 1] =
            hadamard(err, activation_derivative(net.layers.back().activation, a_out));
    } else {
        if (net.layers.back().activation != ActivationKind::Linear)
            throw std::invalid_argument(
                "backward: cross-entropy loss requires a linear output layer");
        Matrix err = targets;
        err -= detail::softmax_columns(a_out);
        err *= inv_b;
        deltas[depth - 1] = std::move(err);
    }

    for (std::size_t l = depth - 1; l >= 1; --l) {
        const FeedbackPathway& pw = net.pathways[l - 1];
        const Matrix& delta_src = deltas[pw.source_layer - 1];
        if (delta_src.empty())
            throw std::logic_error("backward: source delta not yet available");
        const Matrix deriv =
            activation_derivative(net.layers[l - 1].activation, cache.preact[l - 1]);
        deltas[l - 1] = propagate_error(pw, delta_src, deriv,
                                        pw.kind == PathwayKind::Transpose ? net.layers[l].w
                                                                          : Matrix{},
                                        mc);
    }
    return deltas;
}

struct TrainConfig {
    double eta = 1e-2;
    double lambda = 0.0;
    std::size_t batch = 0;  // 0 = full batch
    std::size_t steps = 0;
    std::size_t record_every = 1;
    std::size_t n_modes = 0;  // mode overlaps to record; 0 = task rank
    FeedbackHyper feedback;
};

/// W_l <- W_l + eta * delta_{l+1} h_l^T - eta * lambda * W_l. The deltas
/// already carry the 1/batch factor, so eta is batch-size invariant to first
/// order.
inline void apply_updates(Network& net, const ForwardCache& cache,
                          const std::vector<Matrix>& deltas, const TrainConfig& cfg,
                          MacCount* mc = nullptr) {
    for (std::size_t j = 0; j < net.depth(); ++j) {
        const Matrix& h_prev = j == 0 ? cache.x : cache.act[j - 1];
        const Matrix dw = matmul_nt(deltas[j], h_prev, mc);
        if (cfg.lambda != 0.0) net.layers[j].w *= 1.0 - cfg.eta * cfg.lambda;
        add_scaled(net.layers[j].w, dw, cfg.eta);
    }
}

namespace detail {

inline Matrix slice_columns_cyclic(const Matrix& m, std::size_t start, std::size_t count) {
    Matrix out(m.rows(), count);
    const std::size_t p = m.cols();
    for (std::size_t j = 0; j < count; ++j) {
        const std::size_t src = (start + j) % p;
        for (std::size_t i = 0; i < m.rows(); ++i) out(i, j) = m(i, src);
    }
    return out;
}

/// Shared training loop. The recorder fills per-task metrics (loss and
/// accuracy over the full dataset plus whatever diagnostics apply); it runs
/// before the first step, every record_every steps, and once after the final
/// update. Diagnostic evaluations are not counted in the MAC ledger.
template <typename Recorder>
Trajectory train_loop(Network& net, const Matrix& inputs, const Matrix& targets,
                      const TrainConfig& cfg, std::size_t n_modes, Recorder&& record) {
    validate_network(net);
    if (inputs.rows() != net.input_dim())
        throw std::invalid_argument("train: task input dim does not match network");
    if (targets.rows() != net.output_dim())
        throw std::invalid_argument("train: task output dim does not match network");
    if (cfg.eta < 0.0) throw std::invalid_argument("train: eta must be >= 0");
    if (cfg.record_every < 1) throw std::invalid_argument("train: record_every must be >= 1");
    if (cfg.feedback.update_interval < 1)
        throw std::invalid_argument("train: update_interval must be >= 1");

    const std::size_t p = inputs.cols();
    const std::size_t bs = cfg.batch == 0 ? p : std::min(cfg.batch, p);
    const bool full_batch = bs == p;

    Trajectory traj;
    traj.n_modes = n_modes;
    std::size_t cursor = 0;

    Matrix xb_buf, yb_buf;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (step % cfg.record_every == 0) record(traj, step);

        if (!full_batch) {
            xb_buf = slice_columns_cyclic(inputs, cursor, bs);
            yb_buf = slice_columns_cyclic(targets, cursor, bs);
            cursor = (cursor + bs) % p;
        }
        const Matrix& xb = full_batch ? inputs : xb_buf;
        const Matrix& yb = full_batch ? targets : yb_buf;

        const ForwardCache cache = forward(net, xb, &traj.ledger.forward);
        const double batch_loss = loss_value(net, cache, yb);
        if (!std::isfinite(batch_loss))
            throw DivergenceError(step, "train: loss diverged at step " + std::to_string(step));

        const std::vector<Matrix> deltas = backward(net, cache, yb, &traj.ledger.backward_error);

        if ((step + 1) % cfg.feedback.update_interval == 0) {
            for (std::size_t l = 1; l < net.depth(); ++l) {
                FeedbackPathway& pw = net.pathways[l - 1];
                if (pw.kind == PathwayKind::FactoredNormative) {
                    update_normative(pw, net.layers[l].w, cfg.feedback,
                                     &traj.ledger.feedback_update);
                } else if (pw.kind == PathwayKind::FactoredLocal) {
                    const Matrix& delta_src = deltas[pw.source_layer - 1];
                    const Matrix* tgt = pw.use_targets && pw.source_layer == net.depth()
                                            ? &yb
                                            : nullptr;
                    update_local(pw, delta_src, cache.act[l - 1], tgt, cfg.feedback,
                                 &traj.ledger.feedback_update);
                }
            }
        }
        apply_updates(net, cache, deltas, cfg, &traj.ledger.weight_update);
    }
    record(traj, cfg.steps);
    return traj;
}

inline std::optional<double> pp_orthonormality_error(const Network& net) {
    std::optional<double> worst;
    for (const FeedbackPathway& pw : net.pathways) {
        if (pw.kind != PathwayKind::FactoredLocal) continue;
        Matrix g = matmul_nt(pw.p, pw.p);
        g -= Matrix::identity(pw.rank);
        const double err = g.frobenius_norm();
        if (!worst || err > *worst) worst = err;
    }
    return worst;
}

}  // namespace detail

/// Train on the rank-d linear task. Records loss, the top mode overlaps, the
/// fixed-point residual |B(Sigma_io - W2 W1)|_F (two-layer nets), and factored
/// pathway diagnostics.
inline Trajectory train(Network& net, const LinearTask& task, const TrainConfig& cfg) {
    const Matrix sigma_io = input_output_covariance(task);
    const SvdTriple svd_io = svd(sigma_io);
    const std::size_t n_modes =
        std::min(cfg.n_modes == 0 ? task.d : cfg.n_modes, svd_io.s.size());
    const bool two_layer = net.depth() == 2;

    auto record = [&](Trajectory& traj, std::size_t step) {
        TrajectoryRecord rec;
        rec.step = step;
        rec.time = static_cast<double>(step) * cfg.eta;
        const ForwardCache cache = forward(net, task.inputs);
        rec.loss = loss_value(net, cache, task.targets);
        if (two_layer) {
            const ModeOverlaps mo = mode_overlaps(net.layers[0].w, net.layers[1].w, svd_io);
            rec.lambdas.assign(mo.lambda.begin(),
                               mo.lambda.begin() +
                                   std::min<std::size_t>(n_modes, mo.lambda.size()));
            Matrix mismatch = sigma_io;
            mismatch -= matmul(net.layers[1].w, net.layers[0].w);
            const Matrix b_eff = effective_matrix(net.pathways[0], net.layers[1].w);
            rec.fixed_point_residual = matmul(b_eff, mismatch).frobenius_norm();
            const FeedbackPathway& pw = net.pathways[0];
            if (is_factored(pw.kind)) {
                const std::size_t r_ref = std::min<std::size_t>(pw.rank, svd_io.s.size());
                Matrix ref(svd_io.u.rows(), r_ref);
                for (std::size_t i = 0; i < ref.rows(); ++i)
                    for (std::size_t j = 0; j < r_ref; ++j) ref(i, j) = svd_io.u(i, j);
                const SubspaceAlignment al = subspace_alignment(pw.p, ref);
                if (!al.principal_angles.empty())
                    rec.subspace_angle_max = al.principal_angles.back();
            }
        }
        rec.pp_orth_err = detail::pp_orthonormality_error(net);
        rec.cum_macs = traj.ledger.total();
        traj.records.push_back(std::move(rec));
    };
    return detail::train_loop(net, task.inputs, task.targets, cfg, n_modes, record);
}

/// Train on the classification task against one-hot targets. Records loss and
/// full-training-set accuracy.
inline Trajectory train(Network& net, const ClassTask& task, const TrainConfig& cfg) {
    const Matrix targets = one_hot_targets(task);

    auto record = [&](Trajectory& traj, std::size_t step) {
        TrajectoryRecord rec;
        rec.step = step;
        rec.time = static_cast<double>(step) * cfg.eta;
        const ForwardCache cache = forward(net, task.inputs);
        rec.loss = loss_value(net, cache, targets);
        const Matrix& out = cache.act.back();
        std::size_t hits = 0;
        for (std::size_t t = 0; t < out.cols(); ++t) {
            std::size_t arg = 0;
            for (std::size_t i = 1; i < out.rows(); ++i)
                if (out(i, t) > out(arg, t)) arg = i;
            if (arg == task.labels[t]) ++hits;
        }
        rec.accuracy = static_cast<double>(hits) / static_cast<double>(out.cols());
        rec.pp_orth_err = detail::pp_orthonormality_error(net);
        rec.cum_macs = traj.ledger.total();
        traj.records.push_back(std::move(rec));
    };
    return detail::train_loop(net, task.inputs, targets, cfg, 0, record);
}

}  // namespace ldfa
