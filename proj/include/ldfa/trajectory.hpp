#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ldfa/matrix.hpp"

namespace ldfa {

/// Thrown when a training loss or an integrated state stops being finite or
/// explodes. `step` is the training step or integrator step that failed.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t step, const std::string& what)
        : std::runtime_error(what), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

/// Multiply-accumulate ledger, split by training phase. Counts come from the
/// matrix kernels, not from closed-form formulas.
struct MacLedger {
    MacCount forward = 0;
    MacCount backward_error = 0;
    MacCount weight_update = 0;
    MacCount feedback_update = 0;

    MacCount total() const { return forward + backward_error + weight_update + feedback_update; }
};

/// One sampled point of a training or integration run. Optional fields stay
/// empty in the CSV when a metric does not apply to the run (never written
/// as zeros; zero is a valid value).
struct TrajectoryRecord {
    std::size_t step = 0;
    double time = 0.0;
    double loss = 0.0;
    std::optional<double> accuracy;
    std::vector<double> lambdas;
    std::optional<double> pp_orth_err;
    std::optional<double> subspace_angle_max;
    std::optional<double> fixed_point_residual;  // diagnostic; not part of the CSV schema
    std::optional<MacCount> cum_macs;
};

struct Trajectory {
    std::vector<TrajectoryRecord> records;
    std::size_t n_modes = 0;
    MacLedger ledger;
};

namespace detail {
inline std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
}  // namespace detail

/// CSV schema: step,time,loss,accuracy,lambda_1..lambda_K,pp_orth_err,
/// subspace_angle_max,cum_macs. Full-precision formatting keeps re-runs
/// byte-identical.
inline void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
    os << "step,time,loss,accuracy";
    for (std::size_t i = 1; i <= traj.n_modes; ++i) os << ",lambda_" << i;
    os << ",pp_orth_err,subspace_angle_max,cum_macs\n";
    for (const TrajectoryRecord& r : traj.records) {
        os << r.step << ',' << detail::format_full(r.time) << ',' << detail::format_full(r.loss)
           << ',';
        if (r.accuracy) os << detail::format_full(*r.accuracy);
        for (std::size_t i = 0; i < traj.n_modes; ++i) {
            os << ',';
            if (i < r.lambdas.size()) os << detail::format_full(r.lambdas[i]);
        }
        os << ',';
        if (r.pp_orth_err) os << detail::format_full(*r.pp_orth_err);
        os << ',';
        if (r.subspace_angle_max) os << detail::format_full(*r.subspace_angle_max);
        os << ',';
        if (r.cum_macs) os << *r.cum_macs;
        os << '\n';
    }
}

inline void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_trajectory_csv: cannot open " + path);
    write_trajectory_csv(traj, f);
    if (!f) throw std::runtime_error("save_trajectory_csv: write failed for " + path);
}

/// Parsed CSV with the columns above; used by the compare subcommand.
struct TrajectoryCsv {
    std::vector<std::string> columns;
    std::vector<std::vector<std::optional<double>>> rows;

    std::size_t column_index(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw std::runtime_error("trajectory csv: missing column " + name);
    }
    std::size_t lambda_count() const {
        std::size_t k = 0;
        while (true) {
            const std::string name = "lambda_" + std::to_string(k + 1);
            bool found = false;
            for (const std::string& c : columns)
                if (c == name) found = true;
            if (!found) break;
            ++k;
        }
        return k;
    }
};

inline TrajectoryCsv parse_trajectory_csv(std::istream& is) {
    TrajectoryCsv out;
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("trajectory csv: empty file");
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) out.columns.push_back(cell);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::optional<double>> row;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                const std::string field = line.substr(start, i - start);
                if (field.empty())
                    row.emplace_back(std::nullopt);
                else
                    row.emplace_back(std::stod(field));
                start = i + 1;
            }
        }
        if (row.size() != out.columns.size())
            throw std::runtime_error("trajectory csv: ragged row");
        out.rows.push_back(std::move(row));
    }
    return out;
}

inline TrajectoryCsv load_trajectory_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_trajectory_csv: cannot open " + path);
    return parse_trajectory_csv(f);
}

}  // namespace ldfa
