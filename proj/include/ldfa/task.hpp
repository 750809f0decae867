#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldfa/matrix.hpp"
#include "ldfa/rng.hpp"
#include "ldfa/svd.hpp"

namespace ldfa {

/// Rank-d linear regression task: targets = A * inputs + noise with
/// A = sum_{j<d} u_j v_j^T built from standard normal vectors. Inputs are
/// i.i.d. standard normal; with `whiten` they are additionally rotated and
/// rescaled so the empirical input covariance is exactly the identity.
struct LinearTask {
    std::size_t n = 0;  // input dim
    std::size_t m = 0;  // output dim
    std::size_t d = 0;  // task rank
    std::size_t p = 0;  // sample count
    double noise_std = 0.0;
    bool whitened = false;
    std::uint64_t seed = 0;
    Matrix a;        // m x n, rank d
    Matrix inputs;   // n x p
    Matrix targets;  // m x p
};

inline Matrix whiten_columns(const Matrix& x) {
    // x = U S V^T  ->  sqrt(p) * U V^T has empirical covariance exactly I.
    const SvdTriple t = svd(x);
    const double scale = std::sqrt(static_cast<double>(x.cols()));
    Matrix u = t.u;
    u *= scale;
    return matmul_nt(u, t.v);
}

inline LinearTask make_linear_task(std::size_t n, std::size_t m, std::size_t d, std::size_t p,
                                   double noise_std, std::uint64_t seed, bool whiten = false) {
    if (d > std::min(n, m))
        throw std::invalid_argument("make_linear_task: rank d = " + std::to_string(d) +
                                    " exceeds min(n, m) = " + std::to_string(std::min(n, m)));
    if (p < 1) throw std::invalid_argument("make_linear_task: p must be >= 1");

    Rng rng(seed);
    LinearTask task;
    task.n = n;
    task.m = m;
    task.d = d;
    task.p = p;
    task.noise_std = noise_std;
    task.whitened = whiten;
    task.seed = seed;

    task.a = Matrix(m, n);
    for (std::size_t j = 0; j < d; ++j) {
        const Matrix u = sample_gaussian(rng, m, 1, 1.0);
        const Matrix v = sample_gaussian(rng, n, 1, 1.0);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) task.a(r, c) += u(r, 0) * v(c, 0);
    }

    task.inputs = sample_gaussian(rng, n, p, 1.0);
    if (whiten) task.inputs = whiten_columns(task.inputs);

    task.targets = matmul(task.a, task.inputs);
    if (noise_std > 0.0) {
        const Matrix noise = sample_gaussian(rng, m, p, noise_std);
        task.targets += noise;
    }
    return task;
}

/// Sigma_io = (1/p) * targets * inputs^T
inline Matrix input_output_covariance(const LinearTask& task) {
    if (task.p < 1) throw std::invalid_argument("input_output_covariance: empty task");
    Matrix c = matmul_nt(task.targets, task.inputs);
    c *= 1.0 / static_cast<double>(task.p);
    return c;
}

/// Gaussian-blob classification task with d classes in n dimensions. Sample
/// order is round-robin over classes so contiguous minibatches stay balanced.
struct ClassTask {
    std::size_t n = 0;  // input dim
    std::size_t d = 0;  // class count (output dim)
    std::size_t p = 0;  // sample count
    double spread = 0.0;
    std::uint64_t seed = 0;
    Matrix inputs;       // n x p
    Matrix class_means;  // n x d
    std::vector<std::size_t> labels;
};

inline ClassTask make_class_task(std::size_t n, std::size_t d, std::size_t per_class,
                                 double spread, std::uint64_t seed) {
    if (d < 2) throw std::invalid_argument("make_class_task: d must be >= 2");
    if (per_class < 1) throw std::invalid_argument("make_class_task: per_class must be >= 1");

    Rng rng(seed);
    ClassTask task;
    task.n = n;
    task.d = d;
    task.p = d * per_class;
    task.spread = spread;
    task.seed = seed;

    task.class_means = sample_gaussian(rng, n, d, 1.0);
    // Means must stay separated by more than twice the within-class std;
    // rescale if the random draw lands too close.
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < d; ++i) {
        for (std::size_t j = i + 1; j < d; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const double diff = task.class_means(r, i) - task.class_means(r, j);
                s += diff * diff;
            }
            min_dist = std::min(min_dist, std::sqrt(s));
        }
    }
    if (min_dist <= 0.0) throw std::runtime_error("make_class_task: degenerate class means");
    if (min_dist <= 2.0 * spread) {
        task.class_means *= (2.0 * spread / min_dist) * 1.01;
    }

    task.inputs = Matrix(n, task.p);
    task.labels.resize(task.p);
    for (std::size_t t = 0; t < task.p; ++t) {
        const std::size_t c = t % d;
        task.labels[t] = c;
        for (std::size_t r = 0; r < n; ++r)
            task.inputs(r, t) = task.class_means(r, c) + spread * rng.next_gaussian();
    }
    return task;
}

/// d x p one-hot target matrix.
inline Matrix one_hot_targets(const ClassTask& task) {
    Matrix y(task.d, task.p);
    for (std::size_t t = 0; t < task.p; ++t) y(task.labels[t], t) = 1.0;
    return y;
}

// --- directory serialization (metadata JSON + matrix dumps) -----------------

inline void save_linear_task(const LinearTask& task, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json meta{{"type", "linear"},         {"n", task.n},
                        {"m", task.m},              {"d", task.d},
                        {"p", task.p},              {"noise_std", task.noise_std},
                        {"whitened", task.whitened}, {"seed", task.seed}};
    std::ofstream f(dir + "/meta.json");
    if (!f) throw std::runtime_error("save_linear_task: cannot open " + dir + "/meta.json");
    f << meta.dump(2) << '\n';
    save_matrix(task.a, dir + "/a.mat");
    save_matrix(task.inputs, dir + "/inputs.mat");
    save_matrix(task.targets, dir + "/targets.mat");
}

inline LinearTask load_linear_task(const std::string& dir) {
    std::ifstream f(dir + "/meta.json");
    if (!f) throw std::runtime_error("load_linear_task: cannot open " + dir + "/meta.json");
    nlohmann::json meta = nlohmann::json::parse(f);
    if (meta.at("type") != "linear")
        throw std::runtime_error("load_linear_task: not a linear task directory");
    LinearTask task;
    task.n = meta.at("n");
    task.m = meta.at("m");
    task.d = meta.at("d");
    task.p = meta.at("p");
    task.noise_std = meta.at("noise_std");
    task.whitened = meta.at("whitened");
    task.seed = meta.at("seed");
    task.a = load_matrix(dir + "/a.mat");
    task.inputs = load_matrix(dir + "/inputs.mat");
    task.targets = load_matrix(dir + "/targets.mat");
    return task;
}

inline void save_class_task(const ClassTask& task, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json meta{{"type", "class"},       {"n", task.n},       {"d", task.d},
                        {"p", task.p},           {"spread", task.spread},
                        {"seed", task.seed},     {"labels", task.labels}};
    std::ofstream f(dir + "/meta.json");
    if (!f) throw std::runtime_error("save_class_task: cannot open " + dir + "/meta.json");
    f << meta.dump(2) << '\n';
    save_matrix(task.inputs, dir + "/inputs.mat");
    save_matrix(task.class_means, dir + "/class_means.mat");
}

inline ClassTask load_class_task(const std::string& dir) {
    std::ifstream f(dir + "/meta.json");
    if (!f) throw std::runtime_error("load_class_task: cannot open " + dir + "/meta.json");
    nlohmann::json meta = nlohmann::json::parse(f);
    if (meta.at("type") != "class")
        throw std::runtime_error("load_class_task: not a class task directory");
    ClassTask task;
    task.n = meta.at("n");
    task.d = meta.at("d");
    task.p = meta.at("p");
    task.spread = meta.at("spread");
    task.seed = meta.at("seed");
    task.labels = meta.at("labels").get<std::vector<std::size_t>>();
    task.inputs = load_matrix(dir + "/inputs.mat");
    task.class_means = load_matrix(dir + "/class_means.mat");
    return task;
}

}  // namespace ldfa
