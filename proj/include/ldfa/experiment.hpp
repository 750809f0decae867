#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ldfa/matrix.hpp"
#include "ldfa/metrics.hpp"
#include "ldfa/network.hpp"
#include "ldfa/task.hpp"
#include "ldfa/theory.hpp"
#include "ldfa/trajectory.hpp"
#include "ldfa/version.hpp"

namespace ldfa {

using nlohmann::json;

/// Configuration rejected by the strict schema; carries every violation found,
/// not just the first.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : std::runtime_error(join(violations)), violations_(std::move(violations)) {}
    const std::vector<std::string>& violations() const { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "invalid config:";
        for (const std::string& e : v) s += "\n  - " + e;
        return s;
    }
    std::vector<std::string> violations_;
};

enum class ExperimentKind { LinearSim, LinearTheory, MlpTrain, RankSweep, FlopsReport };

struct TaskSpec {
    bool linear = true;
    std::size_t n = 0, m = 0, d = 0, p = 0;   // linear
    double noise_std = 1.0;
    bool whiten = false;
    std::size_t per_class = 0;                // class
    double spread = 0.0;
};

struct PathwaySpec {
    PathwayKind kind = PathwayKind::Transpose;
    std::size_t rank = 0;
    std::size_t source = 0;  // 0 = next layer
    bool update_q = false;
    bool use_targets = false;
    bool raw_oja = false;
};

struct NetworkSpec {
    std::vector<std::size_t> hidden;
    std::vector<ActivationKind> activations;  // one per layer, defaults to linear
    LossKind loss = LossKind::SquaredError;
    InitSpec init;
};

/// Parsed and validated experiment description with every default filled in.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::LinearSim;
    std::string name = "run";
    std::size_t repeats = 1;
    std::uint64_t seed = 0;
    std::size_t n_modes = 0;  // 0 = task rank d

    TaskSpec task;
    NetworkSpec network;
    std::vector<PathwaySpec> pathways;  // one per hidden layer
    TrainConfig train;
    OdeConfig ode;

    std::vector<std::size_t> ranks;      // rank-sweep
    double target_fraction = 0.9;        // rank-sweep
    std::vector<std::size_t> widths;     // flops-report
    std::size_t report_batch = 1;        // flops-report
    std::size_t report_interval = 1;     // flops-report

    std::vector<std::size_t> full_widths() const {
        std::vector<std::size_t> w;
        w.push_back(task.linear ? task.n : task.n);
        for (std::size_t h : network.hidden) w.push_back(h);
        w.push_back(task.linear ? task.m : task.d);
        return w;
    }
};

namespace detail {

inline const char* kind_name(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::LinearSim: return "linear-sim";
        case ExperimentKind::LinearTheory: return "linear-theory";
        case ExperimentKind::MlpTrain: return "mlp-train";
        case ExperimentKind::RankSweep: return "rank-sweep";
        case ExperimentKind::FlopsReport: return "flops-report";
    }
    return "?";
}

inline void check_keys(const json& obj, const std::vector<std::string>& allowed,
                       const std::string& where, std::vector<std::string>& errs) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            errs.push_back(where + ": unknown key \"" + it.key() + "\"");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T def, std::vector<std::string>& errs,
         const std::string& where) {
    if (!obj.contains(key)) return def;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        errs.push_back(where + ": field \"" + key + "\" has the wrong type");
        return def;
    }
}

template <typename T>
std::optional<T> require(const json& obj, const std::string& key, std::vector<std::string>& errs,
                         const std::string& where) {
    if (!obj.contains(key)) {
        errs.push_back(where + ": missing required field \"" + key + "\"");
        return std::nullopt;
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        errs.push_back(where + ": field \"" + key + "\" has the wrong type");
        return std::nullopt;
    }
}

inline std::optional<PathwayKind> parse_pathway_kind(const std::string& s) {
    if (s == "transpose") return PathwayKind::Transpose;
    if (s == "fixed_random") return PathwayKind::FixedRandom;
    if (s == "factored_normative") return PathwayKind::FactoredNormative;
    if (s == "factored_local") return PathwayKind::FactoredLocal;
    return std::nullopt;
}

inline std::optional<ActivationKind> parse_activation(const std::string& s) {
    if (s == "linear") return ActivationKind::Linear;
    if (s == "relu") return ActivationKind::Relu;
    if (s == "tanh") return ActivationKind::Tanh;
    return std::nullopt;
}

inline PathwaySpec parse_pathway_obj(const json& obj, const std::string& where,
                                     std::vector<std::string>& errs) {
    PathwaySpec spec;
    check_keys(obj, {"kind", "rank", "source", "update_q", "use_targets", "raw_oja"}, where,
               errs);
    if (auto kind_str = require<std::string>(obj, "kind", errs, where)) {
        if (auto k = parse_pathway_kind(*kind_str))
            spec.kind = *k;
        else
            errs.push_back(where + ": unknown pathway kind \"" + *kind_str + "\"");
    }
    if (spec.kind != PathwayKind::Transpose) {
        if (auto r = require<std::int64_t>(obj, "rank", errs, where)) {
            if (*r < 1)
                errs.push_back(where + ": rank must be >= 1 (got " + std::to_string(*r) + ")");
            else
                spec.rank = static_cast<std::size_t>(*r);
        }
    }
    if (obj.contains("source")) {
        const json& src = obj.at("source");
        if (src.is_string()) {
            const std::string s = src.get<std::string>();
            if (s == "next")
                spec.source = 0;
            else if (s == "output")
                spec.source = static_cast<std::size_t>(-1);
            else
                errs.push_back(where + ": source must be \"next\", \"output\", or a layer index");
        } else if (src.is_number_integer() && src.get<std::int64_t>() >= 0) {
            spec.source = static_cast<std::size_t>(src.get<std::int64_t>());
        } else {
            errs.push_back(where + ": source must be \"next\", \"output\", or a layer index");
        }
    }
    spec.update_q = get_or<bool>(obj, "update_q", false, errs, where);
    spec.use_targets = get_or<bool>(obj, "use_targets", false, errs, where);
    spec.raw_oja = get_or<bool>(obj, "raw_oja", false, errs, where);
    return spec;
}

inline void parse_task(const json& obj, TaskSpec& task, std::vector<std::string>& errs) {
    const std::string where = "task";
    auto type = require<std::string>(obj, "type", errs, where);
    if (!type) return;
    if (*type == "linear") {
        task.linear = true;
        check_keys(obj, {"type", "n", "m", "d", "p", "noise_std", "whiten"}, where, errs);
        if (auto v = require<std::size_t>(obj, "n", errs, where)) task.n = *v;
        if (auto v = require<std::size_t>(obj, "m", errs, where)) task.m = *v;
        if (auto v = require<std::size_t>(obj, "d", errs, where)) task.d = *v;
        if (auto v = require<std::size_t>(obj, "p", errs, where)) task.p = *v;
        task.noise_std = get_or<double>(obj, "noise_std", 1.0, errs, where);
        task.whiten = get_or<bool>(obj, "whiten", false, errs, where);
        if (task.d > std::min(task.n, task.m))
            errs.push_back("task: rank d exceeds min(n, m)");
        if (task.p < 1) errs.push_back("task: p must be >= 1");
    } else if (*type == "class") {
        task.linear = false;
        check_keys(obj, {"type", "n", "d", "per_class", "spread"}, where, errs);
        if (auto v = require<std::size_t>(obj, "n", errs, where)) task.n = *v;
        if (auto v = require<std::size_t>(obj, "d", errs, where)) task.d = *v;
        if (auto v = require<std::size_t>(obj, "per_class", errs, where)) task.per_class = *v;
        task.spread = get_or<double>(obj, "spread", 0.0, errs, where);
        if (task.d < 2) errs.push_back("task: class count d must be >= 2");
    } else {
        errs.push_back("task: unknown type \"" + *type + "\"");
    }
}

inline void parse_network(const json& obj, NetworkSpec& net, std::vector<std::string>& errs) {
    const std::string where = "network";
    check_keys(obj, {"hidden", "activations", "loss", "init"}, where, errs);
    net.hidden = get_or<std::vector<std::size_t>>(obj, "hidden", {}, errs, where);
    const auto act_names =
        get_or<std::vector<std::string>>(obj, "activations", {}, errs, where);
    for (const std::string& a : act_names) {
        if (auto k = parse_activation(a))
            net.activations.push_back(*k);
        else
            errs.push_back(where + ": unknown activation \"" + a + "\"");
    }
    const std::string loss = get_or<std::string>(obj, "loss", "squared_error", errs, where);
    if (loss == "squared_error")
        net.loss = LossKind::SquaredError;
    else if (loss == "cross_entropy")
        net.loss = LossKind::CrossEntropySoftmax;
    else
        errs.push_back(where + ": unknown loss \"" + loss + "\"");
    if (obj.contains("init")) {
        const json& init = obj.at("init");
        check_keys(init, {"kind", "sigma"}, "network.init", errs);
        const std::string kind = get_or<std::string>(init, "kind", "kaiming", errs, "network.init");
        if (kind == "kaiming")
            net.init.kind = InitSpec::Kind::Kaiming;
        else if (kind == "gaussian")
            net.init.kind = InitSpec::Kind::Gaussian;
        else
            errs.push_back("network.init: unknown kind \"" + kind + "\"");
        net.init.sigma = get_or<double>(init, "sigma", 1e-3, errs, "network.init");
    }
}

inline void parse_train(const json& obj, TrainConfig& train, std::vector<std::string>& errs) {
    const std::string where = "train";
    check_keys(obj, {"eta", "lambda", "batch", "steps", "record_every", "feedback"}, where, errs);
    if (auto v = require<double>(obj, "eta", errs, where)) train.eta = *v;
    train.lambda = get_or<double>(obj, "lambda", 0.0, errs, where);
    train.batch = get_or<std::size_t>(obj, "batch", 0, errs, where);
    if (auto v = require<std::size_t>(obj, "steps", errs, where)) train.steps = *v;
    train.record_every = get_or<std::size_t>(obj, "record_every", 1, errs, where);
    if (train.eta <= 0.0) errs.push_back("train: eta must be > 0");
    if (train.record_every < 1) errs.push_back("train: record_every must be >= 1");
    if (obj.contains("feedback")) {
        const json& fb = obj.at("feedback");
        check_keys(fb, {"eta_fb", "lambda", "update_interval"}, "train.feedback", errs);
        train.feedback.eta_fb = get_or<double>(fb, "eta_fb", 1e-2, errs, "train.feedback");
        train.feedback.lambda = get_or<double>(fb, "lambda", 0.0, errs, "train.feedback");
        train.feedback.update_interval =
            get_or<std::size_t>(fb, "update_interval", 1, errs, "train.feedback");
        if (train.feedback.eta_fb <= 0.0) errs.push_back("train.feedback: eta_fb must be > 0");
        if (train.feedback.lambda < 0.0) errs.push_back("train.feedback: lambda must be >= 0");
        if (train.feedback.update_interval < 1)
            errs.push_back("train.feedback: update_interval must be >= 1");
    }
}

inline void parse_ode(const json& obj, OdeConfig& ode, std::vector<std::string>& errs) {
    const std::string where = "ode";
    check_keys(obj, {"regime", "dt", "tau", "tau_b", "lambda", "t_end", "record_stride"}, where,
               errs);
    if (auto reg = require<std::string>(obj, "regime", errs, where)) {
        if (*reg == "fixed_feedback")
            ode.regime = OdeRegime::FixedFeedback;
        else if (*reg == "normative")
            ode.regime = OdeRegime::Normative;
        else if (*reg == "local_oja")
            ode.regime = OdeRegime::LocalOja;
        else
            errs.push_back("ode: unknown regime \"" + *reg + "\"");
    }
    if (auto v = require<double>(obj, "dt", errs, where)) ode.dt = *v;
    if (auto v = require<double>(obj, "t_end", errs, where)) ode.t_end = *v;
    ode.tau = get_or<double>(obj, "tau", 1.0, errs, where);
    ode.tau_b = get_or<double>(obj, "tau_b", ode.tau, errs, where);
    ode.lambda = get_or<double>(obj, "lambda", 0.0, errs, where);
    ode.record_stride = get_or<std::size_t>(obj, "record_stride", 1, errs, where);
    if (ode.dt <= 0.0) errs.push_back("ode: dt must be > 0");
    if (ode.t_end <= 0.0) errs.push_back("ode: t_end must be > 0");
    if (ode.record_stride < 1) errs.push_back("ode: record_stride must be >= 1");
}

}  // namespace detail

/// Resolve "next"/"output" pathway sources to concrete layer indices and check
/// every dimension chain and rank bound; appends violations to errs.
inline void resolve_and_check_pathways(ExperimentConfig& cfg, std::vector<std::string>& errs) {
    const std::vector<std::size_t> widths = cfg.full_widths();
    const std::size_t depth = widths.size() - 1;
    if (cfg.pathways.size() == 1 && depth > 2) {
        // single spec replicated across hidden layers
        cfg.pathways.resize(depth - 1, cfg.pathways[0]);
    }
    if (cfg.pathways.size() != depth - 1) {
        errs.push_back("pathways: expected " + std::to_string(depth - 1) +
                       " entries (one per hidden layer), got " +
                       std::to_string(cfg.pathways.size()));
        return;
    }
    for (std::size_t l = 1; l < depth; ++l) {
        PathwaySpec& spec = cfg.pathways[l - 1];
        const std::string where = "pathways[" + std::to_string(l - 1) + "]";
        if (spec.source == 0) spec.source = l + 1;
        if (spec.source == static_cast<std::size_t>(-1)) spec.source = depth;
        if (spec.source <= l) {
            errs.push_back(where + ": source_layer " + std::to_string(spec.source) +
                           " must exceed the owning layer " + std::to_string(l));
            continue;
        }
        if (spec.source > depth) {
            errs.push_back(where + ": source_layer " + std::to_string(spec.source) +
                           " exceeds the output layer " + std::to_string(depth));
            continue;
        }
        if (spec.kind == PathwayKind::Transpose) {
            if (spec.source != l + 1)
                errs.push_back(where + ": transpose pathways must chain to the next layer");
            continue;
        }
        if (spec.rank < 1) {
            errs.push_back(where + ": rank must be >= 1");
            continue;
        }
        if (spec.rank > widths[l])
            errs.push_back(where + ": rank " + std::to_string(spec.rank) +
                           " exceeds the layer width " + std::to_string(widths[l]));
        if (spec.use_targets && spec.source != depth)
            errs.push_back(where + ": use_targets requires the output layer as source");
    }
}

/// Parse an experiment config from JSON text. Strict schema: unknown keys are
/// rejected and all violations are reported together.
inline ExperimentConfig parse_config_json(const json& root) {
    std::vector<std::string> errs;
    ExperimentConfig cfg;

    detail::check_keys(root,
                       {"kind", "name", "repeats", "seed", "n_modes", "task", "network",
                        "pathways", "train", "ode", "ranks", "target_fraction", "widths",
                        "batch", "update_interval"},
                       "config", errs);

    const auto kind_str = detail::require<std::string>(root, "kind", errs, "config");
    if (kind_str) {
        if (*kind_str == "linear-sim")
            cfg.kind = ExperimentKind::LinearSim;
        else if (*kind_str == "linear-theory")
            cfg.kind = ExperimentKind::LinearTheory;
        else if (*kind_str == "mlp-train")
            cfg.kind = ExperimentKind::MlpTrain;
        else if (*kind_str == "rank-sweep")
            cfg.kind = ExperimentKind::RankSweep;
        else if (*kind_str == "flops-report")
            cfg.kind = ExperimentKind::FlopsReport;
        else
            errs.push_back("config: unknown kind \"" + *kind_str + "\"");
    }
    cfg.name = detail::get_or<std::string>(root, "name", "run", errs, "config");
    cfg.repeats = detail::get_or<std::size_t>(root, "repeats", 1, errs, "config");
    cfg.seed = detail::get_or<std::uint64_t>(root, "seed", 0, errs, "config");
    cfg.n_modes = detail::get_or<std::size_t>(root, "n_modes", 0, errs, "config");
    if (cfg.repeats < 1) errs.push_back("config: repeats must be >= 1");

    const bool needs_task = cfg.kind != ExperimentKind::FlopsReport;
    const bool needs_train =
        cfg.kind == ExperimentKind::LinearSim || cfg.kind == ExperimentKind::MlpTrain ||
        cfg.kind == ExperimentKind::RankSweep;

    if (needs_task) {
        if (root.contains("task"))
            detail::parse_task(root.at("task"), cfg.task, errs);
        else
            errs.push_back("config: missing required section \"task\"");
        if (root.contains("network"))
            detail::parse_network(root.at("network"), cfg.network, errs);
        else
            errs.push_back("config: missing required section \"network\"");

        // default activation: linear everywhere
        const std::size_t layer_count = cfg.network.hidden.size() + 1;
        if (cfg.network.activations.empty())
            cfg.network.activations.assign(layer_count, ActivationKind::Linear);
        if (cfg.network.activations.size() != layer_count)
            errs.push_back("network: expected " + std::to_string(layer_count) +
                           " activations, got " + std::to_string(cfg.network.activations.size()));

        if (root.contains("pathways")) {
            const json& pw = root.at("pathways");
            if (pw.is_string() && pw.get<std::string>() == "transpose") {
                cfg.pathways.assign(1, PathwaySpec{});
                if (cfg.network.hidden.size() >= 1)
                    cfg.pathways.assign(cfg.network.hidden.size(), PathwaySpec{});
            } else if (pw.is_object()) {
                cfg.pathways.assign(std::max<std::size_t>(cfg.network.hidden.size(), 1),
                                    detail::parse_pathway_obj(pw, "pathways", errs));
            } else if (pw.is_array()) {
                std::size_t i = 0;
                for (const json& item : pw)
                    cfg.pathways.push_back(detail::parse_pathway_obj(
                        item, "pathways[" + std::to_string(i++) + "]", errs));
            } else {
                errs.push_back("pathways: expected \"transpose\", an object, or an array");
            }
        } else {
            errs.push_back("config: missing required section \"pathways\"");
        }
        if (errs.empty()) resolve_and_check_pathways(cfg, errs);
    }

    if (needs_train) {
        if (root.contains("train"))
            detail::parse_train(root.at("train"), cfg.train, errs);
        else
            errs.push_back("config: missing required section \"train\"");
    }
    if (cfg.kind == ExperimentKind::LinearTheory) {
        if (root.contains("ode"))
            detail::parse_ode(root.at("ode"), cfg.ode, errs);
        else
            errs.push_back("config: missing required section \"ode\"");
    }
    if (cfg.kind == ExperimentKind::RankSweep) {
        if (auto r = detail::require<std::vector<std::size_t>>(root, "ranks", errs, "config"))
            cfg.ranks = *r;
        cfg.target_fraction =
            detail::get_or<double>(root, "target_fraction", 0.9, errs, "config");
        if (cfg.ranks.empty()) errs.push_back("config: ranks must be non-empty");
        for (std::size_t r : cfg.ranks)
            if (r < 1) errs.push_back("config: ranks entries must be >= 1");
        if (!(cfg.target_fraction > 0.0) || cfg.target_fraction > 1.0)
            errs.push_back("config: target_fraction must be in (0, 1]");
        if (!cfg.task.linear && cfg.task.d >= 2) {
            // ranks are swept on copies of the pathway spec, bounds re-checked per rank
        }
    }
    if (cfg.kind == ExperimentKind::FlopsReport) {
        if (auto w = detail::require<std::vector<std::size_t>>(root, "widths", errs, "config"))
            cfg.widths = *w;
        cfg.report_batch = detail::get_or<std::size_t>(root, "batch", 1, errs, "config");
        cfg.report_interval =
            detail::get_or<std::size_t>(root, "update_interval", 1, errs, "config");
        if (cfg.widths.size() < 2) errs.push_back("config: widths needs at least two entries");
        if (root.contains("pathways")) {
            const json& pw = root.at("pathways");
            if (pw.is_object()) {
                cfg.pathways.assign(cfg.widths.size() >= 2 ? cfg.widths.size() - 2 : 0,
                                    detail::parse_pathway_obj(pw, "pathways", errs));
            } else if (pw.is_array()) {
                std::size_t i = 0;
                for (const json& item : pw)
                    cfg.pathways.push_back(detail::parse_pathway_obj(
                        item, "pathways[" + std::to_string(i++) + "]", errs));
            } else {
                errs.push_back("pathways: expected an object or an array");
            }
        } else {
            errs.push_back("config: missing required section \"pathways\"");
        }
    }
    if (cfg.kind == ExperimentKind::LinearSim || cfg.kind == ExperimentKind::LinearTheory) {
        if (needs_task && !cfg.task.linear)
            errs.push_back("config: " + std::string(detail::kind_name(cfg.kind)) +
                           " requires a linear task");
        if (cfg.network.loss != LossKind::SquaredError)
            errs.push_back("config: linear experiments require the squared_error loss");
    }
    if ((cfg.kind == ExperimentKind::MlpTrain || cfg.kind == ExperimentKind::RankSweep) &&
        needs_task && cfg.task.linear)
        errs.push_back("config: " + std::string(detail::kind_name(cfg.kind)) +
                       " requires a class task");

    if (!errs.empty()) throw ConfigError(std::move(errs));
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError({"cannot open config file " + path});
    json root;
    try {
        root = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError({std::string("JSON parse error: ") + e.what()});
    }
    return parse_config_json(root);
}

/// Canonical JSON echo of the effective config (defaults filled in). Key order
/// is sorted by nlohmann's object representation, so the dump is canonical.
inline json effective_config_json(const ExperimentConfig& cfg) {
    json root;
    root["kind"] = detail::kind_name(cfg.kind);
    root["name"] = cfg.name;
    root["repeats"] = cfg.repeats;
    root["seed"] = cfg.seed;
    root["n_modes"] = cfg.n_modes;
    if (cfg.kind != ExperimentKind::FlopsReport) {
        if (cfg.task.linear) {
            root["task"] = {{"type", "linear"},   {"n", cfg.task.n},
                            {"m", cfg.task.m},    {"d", cfg.task.d},
                            {"p", cfg.task.p},    {"noise_std", cfg.task.noise_std},
                            {"whiten", cfg.task.whiten}};
        } else {
            root["task"] = {{"type", "class"},
                            {"n", cfg.task.n},
                            {"d", cfg.task.d},
                            {"per_class", cfg.task.per_class},
                            {"spread", cfg.task.spread}};
        }
        std::vector<std::string> acts;
        for (ActivationKind a : cfg.network.activations) acts.push_back(to_string(a));
        root["network"] = {
            {"hidden", cfg.network.hidden},
            {"activations", acts},
            {"loss",
             cfg.network.loss == LossKind::SquaredError ? "squared_error" : "cross_entropy"},
            {"init",
             {{"kind", cfg.network.init.kind == InitSpec::Kind::Kaiming ? "kaiming" : "gaussian"},
              {"sigma", cfg.network.init.sigma}}}};
        json pws = json::array();
        for (const PathwaySpec& p : cfg.pathways) {
            pws.push_back({{"kind", to_string(p.kind)},
                           {"rank", p.rank},
                           {"source", p.source},
                           {"update_q", p.update_q},
                           {"use_targets", p.use_targets},
                           {"raw_oja", p.raw_oja}});
        }
        root["pathways"] = pws;
    }
    if (cfg.kind == ExperimentKind::LinearSim || cfg.kind == ExperimentKind::MlpTrain ||
        cfg.kind == ExperimentKind::RankSweep) {
        root["train"] = {{"eta", cfg.train.eta},
                         {"lambda", cfg.train.lambda},
                         {"batch", cfg.train.batch},
                         {"steps", cfg.train.steps},
                         {"record_every", cfg.train.record_every},
                         {"feedback",
                          {{"eta_fb", cfg.train.feedback.eta_fb},
                           {"lambda", cfg.train.feedback.lambda},
                           {"update_interval", cfg.train.feedback.update_interval}}}};
    }
    if (cfg.kind == ExperimentKind::LinearTheory) {
        const char* reg = cfg.ode.regime == OdeRegime::FixedFeedback ? "fixed_feedback"
                          : cfg.ode.regime == OdeRegime::Normative   ? "normative"
                                                                     : "local_oja";
        root["ode"] = {{"regime", reg},     {"dt", cfg.ode.dt},
                       {"tau", cfg.ode.tau}, {"tau_b", cfg.ode.tau_b},
                       {"lambda", cfg.ode.lambda}, {"t_end", cfg.ode.t_end},
                       {"record_stride", cfg.ode.record_stride}};
    }
    if (cfg.kind == ExperimentKind::RankSweep) {
        root["ranks"] = cfg.ranks;
        root["target_fraction"] = cfg.target_fraction;
    }
    if (cfg.kind == ExperimentKind::FlopsReport) {
        root["widths"] = cfg.widths;
        root["batch"] = cfg.report_batch;
        root["update_interval"] = cfg.report_interval;
    }
    return root;
}

/// FNV-1a over the canonical config dump.
inline std::string config_hash(const ExperimentConfig& cfg) {
    const std::string dump = effective_config_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// --- building and running ----------------------------------------------------

/// Per-purpose seeds derived from the run seed; the same derivation is shared
/// by simulation and theory runs so both see identical tasks and initial
/// weights.
struct DerivedSeeds {
    std::uint64_t task, network, pathways;
};

inline DerivedSeeds derive_seeds(std::uint64_t run_seed) {
    Rng rng(run_seed);
    DerivedSeeds s{};
    s.task = rng.next_u64();
    s.network = rng.next_u64();
    s.pathways = rng.next_u64();
    return s;
}

inline Network build_network(const ExperimentConfig& cfg, std::uint64_t net_seed,
                             std::uint64_t pathway_seed) {
    const std::vector<std::size_t> widths = cfg.full_widths();
    Rng net_rng(net_seed);
    Network net = make_mlp(widths, cfg.network.activations, cfg.network.loss, cfg.network.init,
                           net_rng);
    Rng pw_rng(pathway_seed);
    for (std::size_t l = 1; l < widths.size() - 1; ++l) {
        const PathwaySpec& spec = cfg.pathways[l - 1];
        const std::size_t n_dst = widths[l];
        const std::size_t n_src = widths[spec.source];
        switch (spec.kind) {
            case PathwayKind::Transpose:
                net.pathways.push_back(make_transpose_pathway(spec.source));
                break;
            case PathwayKind::FixedRandom:
                net.pathways.push_back(
                    make_fixed_random_pathway(n_dst, n_src, spec.rank, spec.source, pw_rng));
                break;
            case PathwayKind::FactoredNormative:
                net.pathways.push_back(make_factored_normative_pathway(n_dst, n_src, spec.rank,
                                                                       spec.source, pw_rng));
                break;
            case PathwayKind::FactoredLocal:
                net.pathways.push_back(make_factored_local_pathway(
                    n_dst, n_src, spec.rank, spec.source, pw_rng, spec.update_q,
                    spec.use_targets, spec.raw_oja));
                break;
        }
    }
    validate_network(net);
    return net;
}

/// Everything one seeded run produces; the CSV on disk is written from `traj`.
struct RunResult {
    std::uint64_t seed = 0;
    Trajectory traj;
    Network final_net;
};

inline RunResult run_single(const ExperimentConfig& cfg, std::uint64_t run_seed) {
    const DerivedSeeds seeds = derive_seeds(run_seed);
    RunResult out;
    out.seed = run_seed;

    if (cfg.kind == ExperimentKind::LinearSim) {
        const LinearTask task = make_linear_task(cfg.task.n, cfg.task.m, cfg.task.d, cfg.task.p,
                                                 cfg.task.noise_std, seeds.task,
                                                 cfg.task.whiten);
        Network net = build_network(cfg, seeds.network, seeds.pathways);
        TrainConfig train_cfg = cfg.train;
        train_cfg.n_modes = cfg.n_modes;
        out.traj = train(net, task, train_cfg);
        out.final_net = std::move(net);
        return out;
    }
    if (cfg.kind == ExperimentKind::MlpTrain) {
        const ClassTask task = make_class_task(cfg.task.n, cfg.task.d, cfg.task.per_class,
                                               cfg.task.spread, seeds.task);
        Network net = build_network(cfg, seeds.network, seeds.pathways);
        out.traj = train(net, task, cfg.train);
        out.final_net = std::move(net);
        return out;
    }
    if (cfg.kind == ExperimentKind::LinearTheory) {
        const LinearTask task = make_linear_task(cfg.task.n, cfg.task.m, cfg.task.d, cfg.task.p,
                                                 cfg.task.noise_std, seeds.task,
                                                 cfg.task.whiten);
        Network net = build_network(cfg, seeds.network, seeds.pathways);
        const SvdTriple svd_io = svd(input_output_covariance(task));
        const std::size_t n_modes =
            std::min(cfg.n_modes == 0 ? task.d : cfg.n_modes, svd_io.s.size());

        const FeedbackPathway& pw = net.pathways.at(0);
        const Matrix* b = pw.kind == PathwayKind::FixedRandom ? &pw.b : nullptr;
        const Matrix* q = is_factored(pw.kind) ? &pw.q : nullptr;
        const Matrix* p = is_factored(pw.kind) ? &pw.p : nullptr;
        Matrix b_transpose;
        if (pw.kind == PathwayKind::Transpose) {
            b_transpose = net.layers[1].w.transposed();
            b = &b_transpose;
        }
        RotatedState state = rotate_in(net.layers[0].w, net.layers[1].w, p, svd_io, b, q);

        const std::vector<OdeSample> samples = integrate(state, cfg.ode);
        out.traj.n_modes = n_modes;
        for (const OdeSample& sm : samples) {
            TrajectoryRecord rec;
            rec.step = static_cast<std::size_t>(std::llround(sm.t / cfg.ode.dt));
            rec.time = sm.t;
            Matrix e = sm.state.s;
            e -= matmul(sm.state.w2b, sm.state.w1b);
            const double f = e.frobenius_norm();
            rec.loss = 0.5 * f * f;  // rotated mismatch energy
            rec.lambdas = rotated_overlaps(sm.state, n_modes);
            if (sm.state.pb) {
                Matrix g = matmul_nt(*sm.state.pb, *sm.state.pb);
                g -= Matrix::identity(sm.state.pb->rows());
                rec.pp_orth_err = g.frobenius_norm();
            }
            const Matrix w2w1 = matmul(sm.state.w2b, sm.state.w1b);
            if (sm.state.bb)
                rec.fixed_point_residual = fixed_point_residual(*sm.state.bb, sm.state.s, w2w1);
            else if (sm.state.pb && sm.state.q)
                rec.fixed_point_residual =
                    fixed_point_residual(matmul(*sm.state.q, *sm.state.pb), sm.state.s, w2w1);
            out.traj.records.push_back(std::move(rec));
        }
        out.final_net = std::move(net);
        return out;
    }
    throw std::logic_error("run_single: kind has no single-run form");
}

// --- manifest and on-disk layout ---------------------------------------------

struct RunManifest {
    std::string config_hash;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> outputs;
    std::string engine_version;
    std::string started_at;
    std::string finished_at;
};

namespace detail {

inline std::string iso8601_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline json mean_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {{"mean", mean}, {"std", std::sqrt(var)}};
}

inline json terminal_summary(const std::vector<const Trajectory*>& trajs) {
    json out;
    std::vector<double> losses, accs, residuals, orth;
    std::size_t n_lambda = SIZE_MAX;
    for (const Trajectory* t : trajs) {
        const TrajectoryRecord& last = t->records.back();
        losses.push_back(last.loss);
        if (last.accuracy) accs.push_back(*last.accuracy);
        if (last.fixed_point_residual) residuals.push_back(*last.fixed_point_residual);
        if (last.pp_orth_err) orth.push_back(*last.pp_orth_err);
        n_lambda = std::min(n_lambda, last.lambdas.size());
    }
    out["loss"] = mean_std(losses);
    if (accs.size() == trajs.size()) out["accuracy"] = mean_std(accs);
    if (residuals.size() == trajs.size()) out["fixed_point_residual"] = mean_std(residuals);
    if (orth.size() == trajs.size()) out["pp_orth_err"] = mean_std(orth);
    if (n_lambda != SIZE_MAX && n_lambda > 0) {
        json lambdas = json::array();
        for (std::size_t i = 0; i < n_lambda; ++i) {
            std::vector<double> xs;
            for (const Trajectory* t : trajs) xs.push_back(t->records.back().lambdas[i]);
            lambdas.push_back(mean_std(xs));
        }
        out["lambda"] = lambdas;
    }
    return out;
}

}  // namespace detail

/// Execute `repeats` seeded runs, write one trajectory CSV per run plus an
/// aggregate JSON and a manifest. Repeats may run concurrently (`jobs`);
/// outputs go to distinct files and the manifest is written once at the end.
inline RunManifest run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                  std::uint64_t seed_offset = 0, std::size_t jobs = 1) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    RunManifest manifest;
    manifest.config_hash = config_hash(cfg);
    manifest.engine_version = engine_version;
    manifest.started_at = detail::iso8601_now();

    if (cfg.kind == ExperimentKind::FlopsReport) {
        std::vector<PathwayCost> costs;
        for (std::size_t l = 1; l + 1 < cfg.widths.size(); ++l) {
            const PathwaySpec& spec = cfg.pathways.at(l - 1);
            const std::size_t src = spec.source == 0 ? l + 1
                                    : spec.source == static_cast<std::size_t>(-1)
                                        ? cfg.widths.size() - 1
                                        : spec.source;
            costs.push_back({spec.kind, spec.rank, cfg.widths[l], cfg.widths.at(src),
                             spec.update_q});
        }
        const FlopReport rep =
            flop_report(cfg.widths, costs, cfg.report_batch, cfg.report_interval);
        const std::string path = out_dir + "/" + cfg.name + "_flops.json";
        std::ofstream f(path);
        f << flop_report_json(rep).dump(2) << '\n';
        manifest.outputs.push_back(path);
    } else if (cfg.kind == ExperimentKind::RankSweep) {
        json sweep;
        for (std::size_t rank : cfg.ranks) {
            ExperimentConfig sub = cfg;
            sub.kind = ExperimentKind::MlpTrain;
            for (PathwaySpec& p : sub.pathways) p.rank = rank;
            std::vector<std::string> errs;
            resolve_and_check_pathways(sub, errs);
            if (!errs.empty()) throw ConfigError(std::move(errs));

            std::vector<Trajectory> trajs(cfg.repeats);
            std::vector<std::uint64_t> seeds(cfg.repeats);
            for (std::size_t i = 0; i < cfg.repeats; ++i)
                seeds[i] = cfg.seed + seed_offset + i;
            std::vector<std::future<Trajectory>> futs;
            for (std::size_t i = 0; i < cfg.repeats; ++i) {
                futs.push_back(std::async(
                    jobs > 1 ? std::launch::async : std::launch::deferred,
                    [&sub, &seeds, i] { return run_single(sub, seeds[i]).traj; }));
            }
            for (std::size_t i = 0; i < cfg.repeats; ++i) trajs[i] = futs[i].get();

            json per_rank;
            std::vector<const Trajectory*> ptrs;
            json flops = json::array();
            for (std::size_t i = 0; i < cfg.repeats; ++i) {
                const std::string path = out_dir + "/" + cfg.name + "_r" +
                                         std::to_string(rank) + "_seed" +
                                         std::to_string(seeds[i]) + ".csv";
                save_trajectory_csv(trajs[i], path);
                manifest.outputs.push_back(path);
                manifest.seeds.push_back(seeds[i]);
                ptrs.push_back(&trajs[i]);
                const auto ftak = flops_to_accuracy(trajs[i], cfg.target_fraction);
                flops.push_back(ftak ? json(*ftak) : json(nullptr));
            }
            per_rank["terminal"] = detail::terminal_summary(ptrs);
            per_rank["flops_to_accuracy"] = flops;
            sweep[std::to_string(rank)] = per_rank;
        }
        const std::string agg_path = out_dir + "/" + cfg.name + "_aggregate.json";
        std::ofstream agg(agg_path);
        agg << json{{"target_fraction", cfg.target_fraction}, {"ranks", sweep}}.dump(2) << '\n';
        manifest.outputs.push_back(agg_path);
    } else {
        std::vector<std::uint64_t> seeds(cfg.repeats);
        for (std::size_t i = 0; i < cfg.repeats; ++i) seeds[i] = cfg.seed + seed_offset + i;
        manifest.seeds = seeds;

        std::vector<Trajectory> trajs(cfg.repeats);
        std::vector<std::future<Trajectory>> futs;
        for (std::size_t i = 0; i < cfg.repeats; ++i) {
            futs.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                      [&cfg, &seeds, i] { return run_single(cfg, seeds[i]).traj; }));
        }
        for (std::size_t i = 0; i < cfg.repeats; ++i) trajs[i] = futs[i].get();

        std::vector<const Trajectory*> ptrs;
        for (std::size_t i = 0; i < cfg.repeats; ++i) {
            const std::string path =
                out_dir + "/" + cfg.name + "_seed" + std::to_string(seeds[i]) + ".csv";
            save_trajectory_csv(trajs[i], path);
            manifest.outputs.push_back(path);
            ptrs.push_back(&trajs[i]);
        }
        const std::string agg_path = out_dir + "/" + cfg.name + "_aggregate.json";
        std::ofstream agg(agg_path);
        agg << json{{"terminal", detail::terminal_summary(ptrs)}}.dump(2) << '\n';
        manifest.outputs.push_back(agg_path);
    }

    manifest.finished_at = detail::iso8601_now();
    for (const std::string& path : manifest.outputs) {
        std::error_code ec;
        const auto sz = fs::file_size(path, ec);
        if (ec || sz == 0)
            throw std::runtime_error("run_experiment: output missing or empty: " + path);
    }
    const std::string manifest_path = out_dir + "/" + cfg.name + "_manifest.json";
    std::ofstream mf(manifest_path);
    mf << json{{"config_hash", manifest.config_hash},
               {"effective_config", effective_config_json(cfg)},
               {"seeds", manifest.seeds},
               {"outputs", manifest.outputs},
               {"engine_version", manifest.engine_version},
               {"started_at", manifest.started_at},
               {"finished_at", manifest.finished_at}}
              .dump(2)
       << '\n';
    return manifest;
}

// --- simulation vs. theory comparison -----------------------------------------

struct CompareResult {
    std::vector<double> max_deviation;  // per mode
    double overall = 0.0;
    std::size_t rows_compared = 0;
};

/// Maximum |lambda_sim - lambda_theory| per mode, with the theory curve
/// linearly interpolated at the simulation's time stamps. The theory curve
/// must cover the simulation's time range.
inline CompareResult compare_lambda_curves(const TrajectoryCsv& sim, const TrajectoryCsv& theory) {
    const std::size_t modes = std::min(sim.lambda_count(), theory.lambda_count());
    if (modes == 0) throw std::runtime_error("compare: no lambda columns to compare");
    const std::size_t sim_time = sim.column_index("time");
    const std::size_t th_time = theory.column_index("time");

    std::vector<double> th_t;
    for (const auto& row : theory.rows) th_t.push_back(row[th_time].value());
    if (th_t.size() < 2) throw std::runtime_error("compare: theory curve too short");

    CompareResult res;
    res.max_deviation.assign(modes, 0.0);
    for (const auto& row : sim.rows) {
        const double t = row[sim_time].value();
        if (t < th_t.front() - 1e-12 || t > th_t.back() + 1e-12)
            throw std::runtime_error("compare: simulation time " + std::to_string(t) +
                                     " outside theory range");
        auto it = std::lower_bound(th_t.begin(), th_t.end(), t);
        std::size_t hi = std::min<std::size_t>(it - th_t.begin(), th_t.size() - 1);
        std::size_t lo = hi == 0 ? 0 : hi - 1;
        const double span = th_t[hi] - th_t[lo];
        const double w = span > 0.0 ? (t - th_t[lo]) / span : 0.0;
        for (std::size_t k = 0; k < modes; ++k) {
            const std::size_t sc = sim.column_index("lambda_" + std::to_string(k + 1));
            const std::size_t tc = theory.column_index("lambda_" + std::to_string(k + 1));
            if (!row[sc]) continue;
            const double tv =
                (1.0 - w) * theory.rows[lo][tc].value() + w * theory.rows[hi][tc].value();
            const double dev = std::abs(*row[sc] - tv);
            res.max_deviation[k] = std::max(res.max_deviation[k], dev);
            res.overall = std::max(res.overall, dev);
        }
        ++res.rows_compared;
    }
    return res;
}

}  // namespace ldfa
