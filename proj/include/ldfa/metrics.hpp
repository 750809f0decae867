#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "ldfa/feedback.hpp"
#include "ldfa/matrix.hpp"
#include "ldfa/svd.hpp"
#include "ldfa/trajectory.hpp"

namespace ldfa {

/// Exact backward-pass cost of one propagate_error call, in multiply-accumulate
/// operations per example. Dense kinds multiply by an n_in x n_out matrix;
/// factored kinds pay for the two thin products instead.
inline MacCount backward_flops(std::size_t n_in, std::size_t n_out, PathwayKind kind,
                               std::size_t r = 0) {
    if (n_in < 1 || n_out < 1) throw std::invalid_argument("backward_flops: dims must be >= 1");
    switch (kind) {
        case PathwayKind::Transpose:
        case PathwayKind::FixedRandom:
            return static_cast<MacCount>(n_in) * n_out;
        case PathwayKind::FactoredNormative:
        case PathwayKind::FactoredLocal:
            if (r < 1 || r > std::min(n_in, n_out))
                throw std::invalid_argument("backward_flops: factored rank out of range");
            return static_cast<MacCount>(r) * (n_in + n_out);
    }
    throw std::logic_error("backward_flops: unknown kind");
}

/// Rank at which the factored cost r*(n_in+n_out) equals the dense cost.
inline double break_even_rank(std::size_t n_in, std::size_t n_out) {
    return static_cast<double>(n_in) * static_cast<double>(n_out) /
           static_cast<double>(n_in + n_out);
}

/// Principal angles between the row space of p and the column space of an
/// orthonormal reference basis, nondecreasing, in [0, pi/2]. A rank-deficient
/// p cannot reach all reference directions; missing angles are padded with
/// pi/2 and flagged.
struct SubspaceAlignment {
    std::vector<double> principal_angles;
    bool rank_deficient = false;
};

inline SubspaceAlignment subspace_alignment(const Matrix& p, const Matrix& reference_basis) {
    if (p.cols() != reference_basis.rows())
        throw std::invalid_argument("subspace_alignment: ambient dimensions differ");
    const std::size_t want = reference_basis.cols();

    // Orthonormal basis of rowspace(p) from its SVD right vectors.
    const SvdTriple t = svd(p);
    const double tiny = t.s.empty() ? 0.0 : t.s[0] * 1e-12;
    std::size_t k_eff = 0;
    for (double s : t.s)
        if (s > tiny && s > 0.0) ++k_eff;

    SubspaceAlignment out;
    out.rank_deficient = k_eff < std::min(want, p.rows());
    if (k_eff > 0) {
        Matrix basis(p.cols(), k_eff);
        for (std::size_t i = 0; i < p.cols(); ++i)
            for (std::size_t j = 0; j < k_eff; ++j) basis(i, j) = t.v(i, j);
        const Matrix gram = matmul_tn(basis, reference_basis);  // k_eff x want
        const SvdTriple g = svd(gram);
        for (double c : g.s) {
            const double clamped = std::clamp(c, 0.0, 1.0);
            out.principal_angles.push_back(std::acos(clamped));
        }
    }
    std::sort(out.principal_angles.begin(), out.principal_angles.end());
    while (out.principal_angles.size() < want)
        out.principal_angles.push_back(1.5707963267948966);
    if (out.principal_angles.size() > want) out.principal_angles.resize(want);
    return out;
}

/// Per-example MAC breakdown of one training step, per layer and totals.
/// Feedback-factor costs are amortized over the update interval and the batch
/// (the factor updates themselves do not scale with batch size).
struct FlopReport {
    struct Layer {
        std::size_t layer = 0;  // forward edge index, 0-based
        MacCount forward_macs = 0;
        MacCount backward_error_macs = 0;
        MacCount weight_update_macs = 0;
        double feedback_update_macs = 0.0;
    };
    std::vector<Layer> layers;
    MacCount forward_macs = 0;
    MacCount backward_error_macs = 0;
    MacCount weight_update_macs = 0;
    double feedback_update_macs = 0.0;
};

/// Pathway shape summary used by flop_report (decoupled from the network type).
struct PathwayCost {
    PathwayKind kind = PathwayKind::Transpose;
    std::size_t rank = 0;
    std::size_t n_dst = 0;
    std::size_t n_src = 0;
    bool update_q = false;
};

inline double feedback_update_macs_per_update(const PathwayCost& pc, std::size_t batch) {
    const double r = static_cast<double>(pc.rank);
    const double nd = static_cast<double>(pc.n_dst);
    const double ns = static_cast<double>(pc.n_src);
    const double b = static_cast<double>(batch);
    switch (pc.kind) {
        case PathwayKind::Transpose:
        case PathwayKind::FixedRandom:
            return 0.0;
        case PathwayKind::FactoredNormative:
            return 3.0 * nd * r * ns;  // QP, Q^T E, E P^T
        case PathwayKind::FactoredLocal: {
            double macs = 2.0 * r * ns * b + 2.0 * r * r * ns;  // PD, (PD)D^T, MP^T, (MP^T)P
            if (pc.update_q) macs += r * ns * b + nd * b * r;   // P delta, h(.)^T
            return macs;
        }
    }
    return 0.0;
}

inline FlopReport flop_report(const std::vector<std::size_t>& widths,
                              const std::vector<PathwayCost>& pathways, std::size_t batch,
                              std::size_t update_interval) {
    if (widths.size() < 2) throw std::invalid_argument("flop_report: need at least one layer");
    if (pathways.size() + 2 != widths.size())
        throw std::invalid_argument("flop_report: one pathway per hidden layer expected");
    if (batch < 1 || update_interval < 1)
        throw std::invalid_argument("flop_report: batch and interval must be >= 1");

    FlopReport rep;
    const std::size_t layer_count = widths.size() - 1;
    for (std::size_t j = 0; j < layer_count; ++j) {
        FlopReport::Layer lay;
        lay.layer = j;
        lay.forward_macs = static_cast<MacCount>(widths[j + 1]) * widths[j];
        lay.weight_update_macs = lay.forward_macs;
        if (j >= 1) {
            const PathwayCost& pc = pathways[j - 1];
            lay.backward_error_macs = backward_flops(pc.n_dst, pc.n_src, pc.kind, pc.rank);
            lay.feedback_update_macs = feedback_update_macs_per_update(pc, batch) /
                                       (static_cast<double>(update_interval) *
                                        static_cast<double>(batch));
        }
        rep.forward_macs += lay.forward_macs;
        rep.backward_error_macs += lay.backward_error_macs;
        rep.weight_update_macs += lay.weight_update_macs;
        rep.feedback_update_macs += lay.feedback_update_macs;
        rep.layers.push_back(lay);
    }
    return rep;
}

inline nlohmann::json flop_report_json(const FlopReport& rep) {
    nlohmann::json layers = nlohmann::json::array();
    for (const FlopReport::Layer& l : rep.layers) {
        layers.push_back({{"layer", l.layer},
                          {"forward_macs", l.forward_macs},
                          {"backward_error_macs", l.backward_error_macs},
                          {"weight_update_macs", l.weight_update_macs},
                          {"feedback_update_macs", l.feedback_update_macs}});
    }
    return {{"layers", layers},
            {"totals",
             {{"forward_macs", rep.forward_macs},
              {"backward_error_macs", rep.backward_error_macs},
              {"weight_update_macs", rep.weight_update_macs},
              {"feedback_update_macs", rep.feedback_update_macs}}}};
}

/// Cumulative MACs at the first recorded step whose accuracy reaches
/// target_fraction times the final accuracy; nullopt when never reached.
inline std::optional<MacCount> flops_to_accuracy(const Trajectory& traj, double target_fraction) {
    if (traj.records.empty()) throw std::invalid_argument("flops_to_accuracy: empty trajectory");
    if (!(target_fraction > 0.0) || target_fraction > 1.0)
        throw std::invalid_argument("flops_to_accuracy: target_fraction must be in (0, 1]");
    const TrajectoryRecord& last = traj.records.back();
    if (!last.accuracy || !last.cum_macs)
        throw std::invalid_argument("flops_to_accuracy: trajectory lacks accuracy or MAC records");
    const double target = target_fraction * *last.accuracy;
    for (const TrajectoryRecord& r : traj.records) {
        if (r.accuracy && r.cum_macs && *r.accuracy >= target) return *r.cum_macs;
    }
    return std::nullopt;
}

}  // namespace ldfa
