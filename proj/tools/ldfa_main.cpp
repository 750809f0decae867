// Experiment runner. Exit codes: 0 success, 2 config error, 3 divergence,
// 4 comparison failure.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "ldfa/experiment.hpp"

namespace {

std::string default_out_root() {
    const char* env = std::getenv("LDFA_OUT_ROOT");
    return env ? env : ".";
}

int cmd_run(const std::string& config_path, std::string out_dir, std::uint64_t seed_offset,
            std::size_t jobs) {
    try {
        const ldfa::ExperimentConfig cfg = ldfa::parse_config(config_path);
        if (out_dir.empty()) out_dir = default_out_root();
        const ldfa::RunManifest manifest =
            ldfa::run_experiment(cfg, out_dir, seed_offset, jobs);
        std::printf("config %s (hash %s)\n", config_path.c_str(), manifest.config_hash.c_str());
        for (const std::string& o : manifest.outputs) std::printf("wrote %s\n", o.c_str());
        return 0;
    } catch (const ldfa::ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const ldfa::DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

int cmd_validate(const std::string& config_path) {
    try {
        const ldfa::ExperimentConfig cfg = ldfa::parse_config(config_path);
        std::printf("%s\n", ldfa::effective_config_json(cfg).dump(2).c_str());
        std::printf("config ok (hash %s)\n", ldfa::config_hash(cfg).c_str());
        return 0;
    } catch (const ldfa::ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }
}

int cmd_compare(const std::string& sim_path, const std::string& theory_path, double tol) {
    try {
        const ldfa::TrajectoryCsv sim = ldfa::load_trajectory_csv(sim_path);
        const ldfa::TrajectoryCsv theory = ldfa::load_trajectory_csv(theory_path);
        const ldfa::CompareResult res = ldfa::compare_lambda_curves(sim, theory);
        for (std::size_t k = 0; k < res.max_deviation.size(); ++k)
            std::printf("lambda_%zu: max |sim - theory| = %.6g\n", k + 1, res.max_deviation[k]);
        std::printf("overall max deviation %.6g over %zu rows (tol %.6g)\n", res.overall,
                    res.rows_compared, tol);
        if (res.overall > tol) {
            std::fprintf(stderr, "comparison failed: %.6g > %.6g\n", res.overall, tol);
            return 4;
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"low-dimensional feedback training engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir, sim_path, theory_path;
    std::uint64_t seed_offset = 0;
    std::size_t jobs = 1;
    double tol = 0.05;

    CLI::App* run = app.add_subcommand("run", "execute an experiment config");
    run->add_option("config", config_path, "path to a JSON experiment config")->required();
    run->add_option("--out", out_dir, "output directory (default $LDFA_OUT_ROOT or .)");
    run->add_option("--seed-offset", seed_offset, "shift every run seed by N");
    run->add_option("--jobs", jobs, "max concurrent repeats")->check(CLI::PositiveNumber);

    CLI::App* validate = app.add_subcommand("validate", "check a config and echo defaults");
    validate->add_option("config", config_path, "path to a JSON experiment config")->required();

    CLI::App* compare = app.add_subcommand("compare", "compare simulated and theory curves");
    compare->add_option("sim", sim_path, "simulation trajectory CSV")->required();
    compare->add_option("theory", theory_path, "theory trajectory CSV")->required();
    compare->add_option("--tol", tol, "max allowed |lambda_sim - lambda_theory|");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return cmd_run(config_path, out_dir, seed_offset, jobs);
    if (validate->parsed()) return cmd_validate(config_path);
    return cmd_compare(sim_path, theory_path, tol);
}
