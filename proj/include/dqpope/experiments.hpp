#pragma once

// Config-driven experiment runners: toy MSE table, sample-complexity sweep, contraction suite,
// quantile-fit sanity check and Monte-Carlo oracle dumps.
//
// Configs are JSON documents; unknown keys are rejected at every level.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "csv.hpp"
#include "envs.hpp"
#include "errors.hpp"
#include "estimators.hpp"
#include "losses.hpp"
#include "random.hpp"
#include "tabular_oracle.hpp"

namespace dqpope {

using Json = nlohmann::json;

inline constexpr const char* kOutputDirEnv = "DQPOPE_OUTPUT_DIR";

// ---------------------------------------------------------------------------
// Strict JSON access

namespace cfg {

inline void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T get(const Json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError("missing key '" + key + "' in " + where);
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("key '" + key + "' in " + where + " has the wrong type");
    }
}

template <typename T>
T get_or(const Json& j, const std::string& key, T fallback, const std::string& where) {
    return j.contains(key) ? get<T>(j, key, where) : fallback;
}

}  // namespace cfg

// ---------------------------------------------------------------------------
// Specs

inline RewardNoise parse_noise(const Json& j, const std::string& where) {
    cfg::check_keys(j, {"distribution", "degrees_of_freedom", "sigma"}, where);
    const auto dist = cfg::get<std::string>(j, "distribution", where);
    RewardNoise noise;
    if (dist == "student-t") {
        if (j.contains("sigma")) throw ConfigError("student-t noise takes degrees_of_freedom, not sigma");
        noise = RewardNoise::student_t(cfg::get<double>(j, "degrees_of_freedom", where));
    } else if (dist == "normal") {
        if (j.contains("degrees_of_freedom")) throw ConfigError("normal noise takes sigma, not degrees_of_freedom");
        noise = RewardNoise::normal(cfg::get_or<double>(j, "sigma", 1.0, where));
    } else {
        throw ConfigError("unknown reward noise distribution '" + dist + "'");
    }
    noise.validate();
    return noise;
}

inline PolicySpec parse_policy(const Json& j, const std::string& where) {
    cfg::check_keys(j, {"kind", "action", "weight", "base", "table"}, where);
    const auto kind = cfg::get<std::string>(j, "kind", where);
    if (kind == "uniform-random") return PolicySpec::uniform_random();
    if (kind == "fixed-action") return PolicySpec::fixed_action(cfg::get<int>(j, "action", where));
    if (kind == "heuristic-cartpole") return PolicySpec::heuristic_cartpole();
    if (kind == "tabular-stochastic") {
        return PolicySpec::tabular(cfg::get<std::vector<std::vector<double>>>(j, "table", where));
    }
    if (kind == "mixture") {
        return PolicySpec::mixture(parse_policy(cfg::get<Json>(j, "base", where), where + ".base"),
                                   cfg::get<double>(j, "weight", where));
    }
    throw ConfigError("unknown policy kind '" + kind + "'");
}

inline TabularMdp parse_mdp(const Json& j, double gamma, const std::string& where) {
    cfg::check_keys(j, {"transition", "reward", "target_policy", "initial"}, where);
    TabularMdp mdp;
    mdp.gamma = gamma;
    mdp.transition = cfg::get<std::vector<std::vector<std::vector<double>>>>(j, "transition", where);
    mdp.n_states = static_cast<int>(mdp.transition.size());
    mdp.n_actions = mdp.n_states > 0 ? static_cast<int>(mdp.transition[0].size()) : 0;
    const Json rewards = cfg::get<Json>(j, "reward", where);
    if (!rewards.is_array()) throw ConfigError(where + ".reward must be an array");
    for (const auto& row : rewards) {
        std::vector<DiscreteReturnLaw> laws;
        for (const auto& cell : row) {
            const std::string w = where + ".reward";
            cfg::check_keys(cell, {"atoms", "probs"}, w);
            try {
                laws.emplace_back(cfg::get<std::vector<double>>(cell, "atoms", w),
                                  cfg::get<std::vector<double>>(cell, "probs", w));
            } catch (const InputError& e) {
                throw ConfigError(std::string("invalid reward law: ") + e.what());
            }
        }
        mdp.reward.push_back(std::move(laws));
    }
    mdp.target_policy = cfg::get<std::vector<std::vector<double>>>(j, "target_policy", where);
    mdp.initial = cfg::get_or<std::vector<double>>(j, "initial", {}, where);
    mdp.validate();
    return mdp;
}

struct EnvSpec {
    std::string kind = "toy-two-state";
    double gamma = 0.99;
    std::optional<RewardNoise> reward_noise;
    int horizon_cap = 500;
    double base_value = 0.0;
    std::optional<TabularMdp> mdp;

    EnvHandle make(std::optional<RewardNoise> noise_override = std::nullopt) const {
        const auto noise = noise_override ? noise_override : reward_noise;
        if (kind == "toy-two-state") return make_toy_env(noise, base_value, gamma);
        if (kind == "cartpole") return make_cartpole_env(gamma, horizon_cap, noise);
        if (kind == "tabular") return make_tabular_env(*mdp, horizon_cap, noise);
        throw ConfigError("unknown environment kind '" + kind + "'");
    }

    static EnvSpec from_json(const Json& j) {
        const std::string where = "env";
        cfg::check_keys(j, {"kind", "gamma", "reward_noise", "horizon_cap", "base_value", "mdp"}, where);
        EnvSpec e;
        e.kind = cfg::get<std::string>(j, "kind", where);
        if (e.kind != "toy-two-state" && e.kind != "cartpole" && e.kind != "tabular") {
            throw ConfigError("unknown environment kind '" + e.kind + "'");
        }
        e.gamma = cfg::get_or<double>(j, "gamma", 0.99, where);
        if (!(e.gamma > 0.0 && e.gamma < 1.0)) throw ConfigError("env.gamma must lie in (0, 1)");
        if (j.contains("reward_noise") && !j.at("reward_noise").is_null()) {
            e.reward_noise = parse_noise(j.at("reward_noise"), where + ".reward_noise");
        }
        e.horizon_cap = cfg::get_or<int>(j, "horizon_cap", 500, where);
        if (e.horizon_cap < 1) throw ConfigError("env.horizon_cap must be positive");
        e.base_value = cfg::get_or<double>(j, "base_value", 0.0, where);
        if (e.kind == "tabular") {
            e.mdp = parse_mdp(cfg::get<Json>(j, "mdp", where), e.gamma, where + ".mdp");
        } else if (j.contains("mdp")) {
            throw ConfigError("env.mdp is only valid for tabular environments");
        }
        return e;
    }
};

/// One estimator entry: name plus training hyperparameters.
struct EstimatorSpec {
    std::string name;
    TrainConfig train;
    std::optional<long> total_steps;  // overrides epochs_per_iteration: about this many minibatch steps
    int levels = 32;                  // dqope head count
    CategoricalSupport support;       // cateope

    /// Training config for a dataset of n transitions.
    TrainConfig for_dataset(long n) const {
        TrainConfig c = train;
        if (total_steps) {
            const double batches = std::ceil(static_cast<double>(n) / c.batch_size) * c.iterations;
            c.epochs_per_iteration = std::max(1, static_cast<int>(std::lround(static_cast<double>(*total_steps) / batches)));
        }
        return c;
    }

    static EstimatorSpec from_json(const Json& j, double env_gamma) {
        const std::string where = "estimator";
        cfg::check_keys(j,
                        {"name", "iterations", "epochs_per_iteration", "total_steps", "batch_size", "learning_rate",
                         "final_lr_fraction", "gamma", "data_split", "m_target_samples", "m_quantile_levels",
                         "target_update", "hidden", "embedding", "cosine_order", "output_clip", "init",
                         "clip_rewards", "divergence_threshold", "levels", "atoms", "v_min", "v_max"},
                        where);
        EstimatorSpec e;
        e.name = cfg::get<std::string>(j, "name", where);
        static const std::set<std::string> known{"dqpope", "dope", "dqope", "cateope"};
        if (!known.count(e.name)) throw ConfigError("unknown estimator '" + e.name + "'");
        TrainConfig& t = e.train;
        t.gamma = cfg::get_or<double>(j, "gamma", env_gamma, where);
        t.iterations = cfg::get_or<int>(j, "iterations", t.iterations, where);
        t.epochs_per_iteration = cfg::get_or<int>(j, "epochs_per_iteration", t.epochs_per_iteration, where);
        if (j.contains("total_steps")) {
            if (j.contains("epochs_per_iteration")) {
                throw ConfigError("total_steps and epochs_per_iteration are mutually exclusive");
            }
            e.total_steps = cfg::get<long>(j, "total_steps", where);
            if (*e.total_steps < 1) throw ConfigError("total_steps must be positive");
        }
        t.batch_size = cfg::get_or<int>(j, "batch_size", t.batch_size, where);
        t.learning_rate = cfg::get_or<double>(j, "learning_rate", t.learning_rate, where);
        t.final_lr_fraction = cfg::get_or<double>(j, "final_lr_fraction", t.final_lr_fraction, where);
        t.data_split = cfg::get_or<bool>(j, "data_split", t.data_split, where);
        t.m_target_samples = cfg::get_or<int>(j, "m_target_samples", t.m_target_samples, where);
        t.m_quantile_levels = cfg::get_or<int>(j, "m_quantile_levels", t.m_quantile_levels, where);
        if (j.contains("target_update")) {
            const Json& u = j.at("target_update");
            const std::string w = where + ".target_update";
            cfg::check_keys(u, {"kind", "every", "rho"}, w);
            const auto kind = cfg::get<std::string>(u, "kind", w);
            if (kind == "per-iteration") {
                t.target_update = TargetUpdate::per_iteration();
            } else if (kind == "hard") {
                t.target_update = TargetUpdate::hard_every(cfg::get<long>(u, "every", w));
            } else if (kind == "soft") {
                t.target_update = TargetUpdate::soft(cfg::get<double>(u, "rho", w));
            } else {
                throw ConfigError("unknown target update kind '" + kind + "'");
            }
        }
        t.hidden = cfg::get_or<std::vector<int>>(j, "hidden", t.hidden, where);
        if (j.contains("embedding")) t.embedding = tau_embedding_from_string(cfg::get<std::string>(j, "embedding", where));
        t.cosine_order = cfg::get_or<int>(j, "cosine_order", t.cosine_order, where);
        if (j.contains("output_clip") && !j.at("output_clip").is_null()) {
            t.output_clip = cfg::get<double>(j, "output_clip", where);
        }
        if (j.contains("init")) t.init = weight_init_from_string(cfg::get<std::string>(j, "init", where));
        t.clip_rewards = cfg::get_or<bool>(j, "clip_rewards", t.clip_rewards, where);
        t.divergence_threshold = cfg::get_or<double>(j, "divergence_threshold", t.divergence_threshold, where);
        e.levels = cfg::get_or<int>(j, "levels", e.levels, where);
        e.support.atoms = cfg::get_or<int>(j, "atoms", e.support.atoms, where);
        e.support.v_min = cfg::get_or<double>(j, "v_min", e.support.v_min, where);
        e.support.v_max = cfg::get_or<double>(j, "v_max", e.support.v_max, where);
        t.validate();
        if (e.name == "dqope" && e.levels < 1) throw ConfigError("dqope needs at least one level");
        if (e.name == "cateope") e.support.validate();
        return e;
    }
};

struct ExperimentConfig {
    std::string kind;
    EnvSpec env;
    std::optional<PolicySpec> target_policy;
    std::vector<EstimatorSpec> estimators;
    std::vector<RewardNoise> noise_settings;
    int replicates = 1;
    std::uint64_t base_seed = 0;
    std::vector<long> sample_sizes;
    std::vector<double> mixture_rates{1.0, 0.8, 0.6, 0.4};
    std::vector<int> k_values{4, 8, 16, 32};
    std::string level_mode = "random";
    long dataset_size = 3200;
    long oracle_rollouts = 5000;
    long eval_draws = 5000;
    std::vector<double> gammas{0.5, 0.9};
    std::vector<int> p_values{1, 2};
    int trials = 200;
    int threads = 0;
    std::filesystem::path output_dir = "results";

    /// Policy being evaluated: explicit, else the environment's natural one.
    PolicySpec target() const {
        if (target_policy) return *target_policy;
        if (env.kind == "cartpole") return PolicySpec::heuristic_cartpole();
        if (env.kind == "tabular") return PolicySpec::tabular(env.mdp->target_policy);
        return PolicySpec::fixed_action(0);
    }

    /// output_dir, unless the override environment variable is set.
    std::filesystem::path resolved_output_dir() const {
        if (const char* dir = std::getenv(kOutputDirEnv); dir && *dir) return dir;
        return output_dir;
    }

    static ExperimentConfig from_json(const Json& j) {
        const std::string where = "config";
        cfg::check_keys(j,
                        {"experiment", "env", "target_policy", "estimators", "noise_settings", "replicates",
                         "base_seed", "sample_sizes", "mixture_rates", "K_values", "level_mode", "dataset_size",
                         "oracle_rollouts", "eval_draws", "gammas", "p_values", "trials", "threads", "output_dir"},
                        where);
        ExperimentConfig c;
        c.kind = cfg::get<std::string>(j, "experiment", where);
        static const std::set<std::string> kinds{"toy-mse-table", "complexity-sweep", "tabular-contraction",
                                                 "quantile-fit-sanity"};
        if (!kinds.count(c.kind)) throw ConfigError("unknown experiment kind '" + c.kind + "'");
        if (j.contains("env")) c.env = EnvSpec::from_json(j.at("env"));
        if (j.contains("target_policy")) c.target_policy = parse_policy(j.at("target_policy"), "target_policy");
        if (j.contains("estimators")) {
            if (!j.at("estimators").is_array()) throw ConfigError("estimators must be an array");
            for (const auto& e : j.at("estimators")) c.estimators.push_back(EstimatorSpec::from_json(e, c.env.gamma));
        }
        if (j.contains("noise_settings")) {
            if (!j.at("noise_settings").is_array()) throw ConfigError("noise_settings must be an array");
            for (const auto& n : j.at("noise_settings")) c.noise_settings.push_back(parse_noise(n, "noise_settings"));
        }
        c.replicates = cfg::get_or<int>(j, "replicates", c.replicates, where);
        if (c.replicates < 1) throw ConfigError("replicates must be >= 1");
        c.base_seed = cfg::get_or<std::uint64_t>(j, "base_seed", c.base_seed, where);
        c.sample_sizes = cfg::get_or<std::vector<long>>(j, "sample_sizes", c.sample_sizes, where);
        for (long n : c.sample_sizes) {
            if (n < 1) throw ConfigError("sample sizes must be positive");
        }
        c.mixture_rates = cfg::get_or<std::vector<double>>(j, "mixture_rates", c.mixture_rates, where);
        for (double m : c.mixture_rates) {
            if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("mixture rates must lie in [0, 1]");
        }
        c.k_values = cfg::get_or<std::vector<int>>(j, "K_values", c.k_values, where);
        for (int k : c.k_values) {
            if (k < 1) throw ConfigError("K values must be positive");
        }
        c.level_mode = cfg::get_or<std::string>(j, "level_mode", c.level_mode, where);
        if (c.level_mode != "random" && c.level_mode != "midpoint") {
            throw ConfigError("level_mode must be 'random' or 'midpoint'");
        }
        c.dataset_size = cfg::get_or<long>(j, "dataset_size", c.dataset_size, where);
        c.oracle_rollouts = cfg::get_or<long>(j, "oracle_rollouts", c.oracle_rollouts, where);
        c.eval_draws = cfg::get_or<long>(j, "eval_draws", c.eval_draws, where);
        if (c.dataset_size < 1 || c.oracle_rollouts < 1 || c.eval_draws < 1) {
            throw ConfigError("dataset_size, oracle_rollouts and eval_draws must be positive");
        }
        c.gammas = cfg::get_or<std::vector<double>>(j, "gammas", c.gammas, where);
        for (double g : c.gammas) {
            if (!(g >= 0.0 && g < 1.0)) throw ConfigError("contraction gammas must lie in [0, 1)");
        }
        c.p_values = cfg::get_or<std::vector<int>>(j, "p_values", c.p_values, where);
        for (int p : c.p_values) {
            if (p < 1) throw ConfigError("Wasserstein orders must be >= 1");
        }
        c.trials = cfg::get_or<int>(j, "trials", c.trials, where);
        if (c.trials < 1) throw ConfigError("trials must be >= 1");
        c.threads = cfg::get_or<int>(j, "threads", c.threads, where);
        if (c.threads < 0) throw ConfigError("threads must be >= 0");
        c.output_dir = cfg::get_or<std::string>(j, "output_dir", c.output_dir.string(), where);
        c.check_kind();
        return c;
    }

    static ExperimentConfig from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config file " + path.string());
        Json j;
        try {
            j = Json::parse(in, nullptr, true, true);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
        }
        return from_json(j);
    }

private:
    void check_kind() const {
        if (kind == "toy-mse-table") {
            if (env.kind != "toy-two-state") throw ConfigError("toy-mse-table requires the toy-two-state env");
            if (estimators.empty()) throw ConfigError("toy-mse-table needs at least one estimator");
        } else if (kind == "complexity-sweep") {
            if (env.kind != "cartpole" && env.kind != "tabular") {
                throw ConfigError("complexity-sweep requires a cartpole or tabular env");
            }
            if (sample_sizes.empty()) throw ConfigError("complexity-sweep needs sample_sizes");
            if (estimators.size() != 1 || estimators[0].name != "dqpope") {
                throw ConfigError("complexity-sweep takes exactly one dqpope estimator");
            }
        } else if (kind == "quantile-fit-sanity") {
            if (estimators.size() != 1 || estimators[0].name != "dqpope") {
                throw ConfigError("quantile-fit-sanity takes exactly one dqpope estimator");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Work pool

/// Runs body(i) for i in [0, n) on `threads` workers (0 = hardware concurrency). Results must be
/// written to slot i by the body; the first failure by index is rethrown after all workers join.
template <typename Body>
void parallel_for(long n, int threads, Body&& body) {
    const int workers = std::max(1, std::min<int>(threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency()),
                                                  static_cast<int>(std::max<long>(n, 1))));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::atomic<long> next{0};
    auto worker = [&] {
        for (long i = next++; i < n; i = next++) {
            try {
                body(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

// ---------------------------------------------------------------------------
// Quantile curves against a reference law

/// 99 midpoint levels (2k - 1) / 198.
inline std::vector<double> curve_levels() { return midpoint_levels(99); }

struct QuantileComparison {
    double tau;
    double estimated;
    double ground_truth;
};

inline std::vector<QuantileComparison> compare_quantiles(const std::function<double(double)>& estimated,
                                                         const ReturnDistribution& reference) {
    std::vector<QuantileComparison> rows;
    for (double tau : curve_levels()) rows.push_back({tau, estimated(tau), reference.quantile(tau)});
    return rows;
}

inline void emit_quantile_curve(std::ostream& out, const std::vector<QuantileComparison>& rows) {
    csv::Writer w(out, {"tau", "estimated", "ground_truth"});
    for (const auto& r : rows) w.row() << r.tau << r.estimated << r.ground_truth;
}

// ---------------------------------------------------------------------------
// Toy MSE table

struct ToyCell {
    std::string noise;
    std::string estimator;
    int k = 0;               // quantile count for dqpope, 0 otherwise
    double mse = 0.0;        // raw (not scaled)
    double sd = 0.0;         // standard deviation of the squared errors
    std::vector<double> estimates;
};

struct ToyTable {
    double truth = 0.0;
    std::vector<ToyCell> cells;

    const ToyCell& find(const std::string& noise, const std::string& estimator, int k = 0) const {
        for (const auto& c : cells) {
            if (c.noise == noise && c.estimator == estimator && c.k == k) return c;
        }
        throw InputError("no toy table cell for " + noise + " / " + estimator + " / K=" + std::to_string(k));
    }
};

inline std::vector<RewardNoise> default_toy_noise() {
    return {RewardNoise::student_t(2),  RewardNoise::student_t(4),  RewardNoise::student_t(6),
            RewardNoise::student_t(8),  RewardNoise::student_t(10), RewardNoise::normal(1.0)};
}

inline ToyTable run_toy_mse_table(const ExperimentConfig& c) {
    if (c.kind != "toy-mse-table") throw ConfigError("config is not a toy-mse-table experiment");
    const auto noises = c.noise_settings.empty() ? default_toy_noise() : c.noise_settings;
    const PolicySpec policy = c.target();
    ToyTable table;
    table.truth = c.env.base_value;  // all supported noise laws are centred

    for (std::size_t ni = 0; ni < noises.size(); ++ni) {
        const EnvHandle env = c.env.make(noises[ni]);
        // Column layout: dqpope contributes one column per K, the rest one each.
        std::vector<ToyCell> columns;
        for (const auto& e : c.estimators) {
            if (e.name == "dqpope") {
                for (int k : c.k_values) columns.push_back({noises[ni].label(), e.name, k, 0.0, 0.0, {}});
            } else {
                columns.push_back({noises[ni].label(), e.name, 0, 0.0, 0.0, {}});
            }
        }
        std::vector<std::vector<double>> per_rep(static_cast<std::size_t>(c.replicates));
        parallel_for(c.replicates, c.threads, [&](long r) {
            const std::uint64_t seed = c.base_seed + static_cast<std::uint64_t>(r);
            const std::uint64_t base_stream = 1000 * ni;
            Rng data_rng = make_rng(seed, base_stream);
            const Dataset data = collect_dataset(*env, policy, c.dataset_size, data_rng);
            std::vector<double> out;
            for (std::size_t ei = 0; ei < c.estimators.size(); ++ei) {
                const auto& e = c.estimators[ei];
                const TrainConfig tc = e.for_dataset(c.dataset_size);
                Rng train_rng = make_rng(seed, base_stream + 10 * (ei + 1));
                Rng eval_rng = make_rng(seed, base_stream + 10 * (ei + 1) + 1);
                if (e.name == "dqpope") {
                    const auto net = dqpope_train(data, policy, env->action_count(), tc, train_rng);
                    for (int k : c.k_values) {
                        const auto draws = initial_draws(*env, policy, k, eval_rng);
                        const auto levels = c.level_mode == "midpoint" ? midpoint_levels(k) : uniform_levels(k, eval_rng);
                        out.push_back(value_from_quantiles(net, draws, levels));
                    }
                } else if (e.name == "dope") {
                    const auto q = dope_train(data, policy, env->action_count(), tc, train_rng);
                    out.push_back(q_value_estimate(q, initial_draws(*env, policy, 1, eval_rng)));
                } else if (e.name == "dqope") {
                    const auto model =
                        dqope_train(data, policy, env->action_count(), midpoint_levels(e.levels), tc, train_rng);
                    out.push_back(model.value(initial_draws(*env, policy, 1, eval_rng)));
                } else if (e.name == "cateope") {
                    const auto model = cateope_train(data, policy, env->action_count(), e.support, tc, train_rng);
                    out.push_back(model.value(initial_draws(*env, policy, 1, eval_rng)));
                }
            }
            per_rep[static_cast<std::size_t>(r)] = std::move(out);
        });
        for (std::size_t col = 0; col < columns.size(); ++col) {
            auto& cell = columns[col];
            std::vector<double> sq;
            for (const auto& rep : per_rep) {
                cell.estimates.push_back(rep[col]);
                sq.push_back((rep[col] - table.truth) * (rep[col] - table.truth));
            }
            cell.mse = mse_over_replicates(cell.estimates, table.truth);
            double var = 0.0;
            for (double s : sq) var += (s - cell.mse) * (s - cell.mse);
            cell.sd = sq.size() > 1 ? std::sqrt(var / static_cast<double>(sq.size() - 1)) : 0.0;
            table.cells.push_back(std::move(cell));
        }
    }
    return table;
}

inline std::string estimator_label(const std::string& name) {
    if (name == "dqpope") return "DQPOPE";
    if (name == "dope") return "DOPE";
    if (name == "dqope") return "DQOPE";
    if (name == "cateope") return "CateOPE";
    return name;
}

inline void write_toy_table(const ToyTable& t, const std::filesystem::path& dir) {
    auto summary = csv::open_output(dir / "toy_mse_table.csv");
    csv::Writer w(summary, {"noise", "estimator", "K", "mse_x1e3", "sd_x1e3", "replicates"});
    for (const auto& c : t.cells) {
        w.row() << c.noise << estimator_label(c.estimator) << (c.k > 0 ? std::to_string(c.k) : std::string())
                << 1e3 * c.mse << 1e3 * c.sd << static_cast<long>(c.estimates.size());
    }
    auto per_rep = csv::open_output(dir / "toy_mse_replicates.csv");
    csv::Writer r(per_rep, {"noise", "estimator", "K", "replicate", "estimate"});
    for (const auto& c : t.cells) {
        for (std::size_t i = 0; i < c.estimates.size(); ++i) {
            r.row() << c.noise << estimator_label(c.estimator) << (c.k > 0 ? std::to_string(c.k) : std::string())
                    << static_cast<long>(i) << c.estimates[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Sample-complexity sweep

struct SweepRow {
    double mixture_rate;
    long sample_size;
    std::uint64_t seed;
    double w1;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    double oracle_mean = 0.0;
    // Quantile curve of the first seed at the pure-target, largest-N cell.
    std::vector<QuantileComparison> curve;

    double mean_w1(double mixture_rate, long sample_size) const {
        double acc = 0.0;
        int count = 0;
        for (const auto& r : rows) {
            if (r.mixture_rate == mixture_rate && r.sample_size == sample_size) {
                acc += r.w1;
                ++count;
            }
        }
        if (count == 0) throw InputError("no sweep cell for the requested (mixture, N)");
        return acc / count;
    }
};

inline SweepResult run_complexity_sweep(const ExperimentConfig& c) {
    if (c.kind != "complexity-sweep") throw ConfigError("config is not a complexity-sweep experiment");
    const EnvHandle env = c.env.make();
    const PolicySpec target = c.target();
    const EstimatorSpec& est = c.estimators.front();
    const int actions = env->action_count();

    Rng oracle_rng = make_rng(c.base_seed, 0xC0FFEE);
    const ReturnDistribution oracle = mc_return_distribution(*env, target, c.oracle_rollouts, oracle_rng);

    // Cells: pure-target data over every N, then every other mixture rate at each N.
    struct Cell {
        double mixture;
        long n;
        int replicate;
    };
    std::vector<Cell> cells;
    const long largest = *std::max_element(c.sample_sizes.begin(), c.sample_sizes.end());
    for (double m : c.mixture_rates) {
        for (long n : c.sample_sizes) {
            for (int r = 0; r < c.replicates; ++r) cells.push_back({m, n, r});
        }
    }

    SweepResult result;
    result.oracle_mean = oracle.mean();
    result.rows.resize(cells.size());
    std::vector<std::vector<QuantileComparison>> curves(cells.size());
    parallel_for(static_cast<long>(cells.size()), c.threads, [&](long i) {
        const Cell& cell = cells[static_cast<std::size_t>(i)];
        const std::uint64_t seed = c.base_seed + static_cast<std::uint64_t>(cell.replicate);
        Rng data_rng = make_rng(seed, 0);
        const Dataset data = collect_dataset(*env, PolicySpec::mixture(target, cell.mixture), cell.n, data_rng);
        Rng train_rng = make_rng(seed, 1);
        const QuantileNet net = dqpope_train(data, target, actions, est.for_dataset(cell.n), train_rng);
        Rng eval_rng = make_rng(seed, 2);
        const auto draws = initial_draws(*env, target, c.eval_draws, eval_rng);
        const ReturnDistribution estimate = sample_mixture_from_net(net, draws, eval_rng);
        result.rows[static_cast<std::size_t>(i)] = {cell.mixture, cell.n, seed, w1_empirical(estimate, oracle)};
        if (cell.replicate == 0 && cell.mixture == 1.0 && cell.n == largest) {
            curves[static_cast<std::size_t>(i)] = compare_quantiles(
                [&](double tau) { return estimate.quantile(tau); }, oracle);
        }
    });
    for (auto& curve : curves) {
        if (!curve.empty()) result.curve = std::move(curve);
    }
    return result;
}

inline void write_sweep(const SweepResult& s, const ExperimentConfig& c, const std::filesystem::path& dir) {
    auto raw = csv::open_output(dir / "complexity_sweep.csv");
    csv::Writer w(raw, {"mixture_rate", "sample_size", "seed", "w1"});
    for (const auto& r : s.rows) w.row() << r.mixture_rate << r.sample_size << static_cast<unsigned long long>(r.seed) << r.w1;

    auto summary = csv::open_output(dir / "complexity_sweep_summary.csv");
    csv::Writer m(summary, {"mixture_rate", "sample_size", "mean_w1", "seeds"});
    for (double rate : c.mixture_rates) {
        for (long n : c.sample_sizes) m.row() << rate << n << s.mean_w1(rate, n) << c.replicates;
    }
    if (!s.curve.empty()) {
        auto curve = csv::open_output(dir / "complexity_sweep_quantiles.csv");
        emit_quantile_curve(curve, s.curve);
    }
}

// ---------------------------------------------------------------------------
// Contraction suite

inline std::vector<ContractionSummary> run_contraction_suite(const ExperimentConfig& c) {
    if (c.kind != "tabular-contraction") throw ConfigError("config is not a tabular-contraction experiment");
    std::vector<ContractionSummary> out;
    std::uint64_t stream = 0;
    for (double gamma : c.gammas) {
        for (int p : c.p_values) {
            Rng rng = make_rng(c.base_seed, stream++);
            out.push_back(contraction_trials(gamma, p, c.trials, rng));
        }
    }
    return out;
}

inline void write_contraction(const std::vector<ContractionSummary>& rows, const std::filesystem::path& dir) {
    auto file = csv::open_output(dir / "contraction.csv");
    csv::Writer w(file, {"gamma", "p", "trials", "skipped", "violations", "max_ratio", "bound", "passed"});
    for (const auto& s : rows) {
        w.row() << s.gamma << s.p << s.trials << s.skipped << s.violations << s.max_ratio << s.bound
                << (s.violations == 0 ? "true" : "false");
    }
}

// ---------------------------------------------------------------------------
// Quantile-fit sanity: single initial (s, a) problem, generator vs Monte-Carlo law

struct QuantileFitResult {
    double ks = 0.0;
    double w1 = 0.0;
    long samples = 0;
    double inversion_fraction = 0.0;  // adjacent decreases along the 99-point curve
    std::vector<QuantileComparison> curve;
};

inline QuantileFitResult run_quantile_fit(const ExperimentConfig& c) {
    if (c.kind != "quantile-fit-sanity") throw ConfigError("config is not a quantile-fit-sanity experiment");
    const EnvHandle env = c.env.make();
    const PolicySpec target = c.target();
    Rng data_rng = make_rng(c.base_seed, 0);
    const Dataset data = collect_dataset(*env, target, c.dataset_size, data_rng);
    Rng train_rng = make_rng(c.base_seed, 1);
    const auto net =
        dqpope_train(data, target, env->action_count(), c.estimators.front().for_dataset(c.dataset_size), train_rng);

    Rng eval_rng = make_rng(c.base_seed, 2);
    const auto start = initial_draws(*env, target, 1, eval_rng).front();
    const ReturnDistribution generated = sample_from_net(net, start.first, start.second, c.eval_draws, eval_rng);
    Rng oracle_rng = make_rng(c.base_seed, 3);
    const ReturnDistribution truth = mc_return_distribution(*env, target, c.eval_draws, oracle_rng);

    QuantileFitResult out;
    out.samples = c.eval_draws;
    out.ks = ks_statistic(generated.samples(), truth.samples());
    out.w1 = w1_empirical(generated, truth);
    const auto levels = curve_levels();
    const auto curve = quantile_curve(net, start.first, start.second, levels);
    int inversions = 0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        out.curve.push_back({curve[i].tau, curve[i].value, truth.quantile(curve[i].tau)});
        if (i > 0 && curve[i].value < curve[i - 1].value) ++inversions;
    }
    out.inversion_fraction = static_cast<double>(inversions) / static_cast<double>(curve.size() - 1);
    return out;
}

inline void write_quantile_fit(const QuantileFitResult& r, const std::filesystem::path& dir) {
    auto summary = csv::open_output(dir / "quantile_fit_summary.csv");
    csv::Writer w(summary, {"samples", "ks", "w1", "inversion_fraction"});
    w.row() << r.samples << r.ks << r.w1 << r.inversion_fraction;
    auto curve = csv::open_output(dir / "quantile_fit_curve.csv");
    emit_quantile_curve(curve, r.curve);
}

// ---------------------------------------------------------------------------
// Oracle dump and dispatch

/// Monte-Carlo return law of the target policy (oracle_rollouts samples, sorted).
inline ReturnDistribution run_oracle(const ExperimentConfig& c) {
    const EnvHandle env = c.env.make(c.env.reward_noise ? c.env.reward_noise
                                     : c.noise_settings.empty() ? std::nullopt
                                                                : std::optional<RewardNoise>(c.noise_settings.front()));
    Rng rng = make_rng(c.base_seed, 0xC0FFEE);
    return mc_return_distribution(*env, c.target(), c.oracle_rollouts, rng);
}

inline void write_oracle(const ReturnDistribution& d, const std::filesystem::path& dir) {
    auto file = csv::open_output(dir / "oracle_returns.csv");
    csv::Writer w(file, {"index", "return"});
    for (std::size_t i = 0; i < d.size(); ++i) w.row() << static_cast<long>(i) << d.samples()[i];
}

/// Runs the configured experiment and writes its CSVs; returns the output directory.
inline std::filesystem::path run_experiment(const ExperimentConfig& c) {
    const auto dir = c.resolved_output_dir();
    if (c.kind == "toy-mse-table") {
        write_toy_table(run_toy_mse_table(c), dir);
    } else if (c.kind == "complexity-sweep") {
        write_sweep(run_complexity_sweep(c), c, dir);
    } else if (c.kind == "tabular-contraction") {
        write_contraction(run_contraction_suite(c), dir);
    } else if (c.kind == "quantile-fit-sanity") {
        write_quantile_fit(run_quantile_fit(c), dir);
    }
    return dir;
}

}  // namespace dqpope
