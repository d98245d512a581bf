#pragma once

// Distributional and value-based off-policy evaluation estimators.
//
//  * DQPOPE: quantile-process regression, f(s, a, tau) with tau as a network input; targets are
//    exact draws r + gamma * f_target(s', a', u), u ~ Unif(0, 1).
//  * DOPE:   fitted-Q evaluation with squared loss.
//  * DQOPE:  fixed-level quantile heads trained on pseudo-samples r + gamma * f_target,tau_j(s', a').
//  * CateOPE: categorical return law on a fixed atom grid with projected cross-entropy targets.
//  * WIS, DR: trajectory-level importance-sampling estimators.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "envs.hpp"
#include "errors.hpp"
#include "losses.hpp"
#include "neural.hpp"
#include "random.hpp"
#include "types.hpp"

namespace dqpope {

struct TargetUpdate {
    enum class Kind { kPerIteration, kHardEvery, kSoft };
    Kind kind = Kind::kPerIteration;
    long every = 1;     // kHardEvery: copy after every `every` gradient steps
    double rho = 0.005; // kSoft

    static TargetUpdate per_iteration() { return {}; }
    static TargetUpdate hard_every(long k) { return {Kind::kHardEvery, k, 0.0}; }
    static TargetUpdate soft(double rho) { return {Kind::kSoft, 1, rho}; }
};

/// Training hyperparameters shared by the network-based estimators.
struct TrainConfig {
    int iterations = 1;           // outer iterations T
    int epochs_per_iteration = 1; // passes over the (shard of the) dataset per iteration
    int batch_size = 32;
    double learning_rate = 0.002;
    double final_lr_fraction = 1.0; // learning rate decays linearly to this fraction over training
    double gamma = 0.99;
    bool data_split = false;      // iteration t trains on the t-th contiguous shard only
    int m_target_samples = 1;     // generator draws u^j per transition
    int m_quantile_levels = 1;    // regression levels tau^h per transition
    TargetUpdate target_update = TargetUpdate::per_iteration();
    std::vector<int> hidden{12, 12};
    TauEmbedding embedding = TauEmbedding::kConcatScalar;
    int cosine_order = 64;
    std::optional<double> output_clip;
    WeightInit init = WeightInit::kFanInUniform;
    bool clip_rewards = false;    // clamp training rewards to [-1e6, 1e6]
    double divergence_threshold = 1e6;

    void validate() const {
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (epochs_per_iteration < 1) throw ConfigError("epochs_per_iteration must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
            throw ConfigError("final_lr_fraction must lie in [0, 1]");
        }
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
        if (m_target_samples < 1 || m_quantile_levels < 1) {
            throw ConfigError("m_target_samples and m_quantile_levels must be >= 1");
        }
        if (target_update.kind == TargetUpdate::Kind::kHardEvery && target_update.every < 1) {
            throw ConfigError("hard target update period must be >= 1");
        }
        if (target_update.kind == TargetUpdate::Kind::kSoft &&
            !(target_update.rho >= 0.0 && target_update.rho <= 1.0)) {
            throw ConfigError("soft target update rate must lie in [0, 1]");
        }
    }
};

struct LossAndGrad {
    double loss = 0.0;
    Eigen::VectorXd grad;
};

namespace detail {

inline double training_reward(const Transition& tr, const TrainConfig& cfg) {
    return cfg.clip_rewards ? std::clamp(tr.reward, -1e6, 1e6) : tr.reward;
}

inline void check_dataset(const Dataset& data) {
    if (data.empty()) throw InputError("training dataset is empty");
}

inline NetArchitecture architecture_for(const Dataset& data, int action_count, const TrainConfig& cfg,
                                        TauEmbedding embedding, int outputs) {
    NetArchitecture arch;
    arch.state_dim = static_cast<int>(data.front().state.size());
    arch.action_count = action_count;
    arch.hidden = cfg.hidden;
    arch.output_dim = outputs;
    arch.embedding = embedding;
    arch.cosine_order = cfg.cosine_order;
    arch.output_clip = cfg.output_clip;
    return arch;
}

/// Inputs (s_i, a_i) repeated `reps` times per transition, transition-major.
inline NetInput state_action_input(const Dataset& data, std::span<const long> idx, int reps,
                                   const std::vector<double>& taus) {
    NetInput in;
    const long d = static_cast<long>(data[idx[0]].state.size());
    const long cols = static_cast<long>(idx.size()) * reps;
    in.states.resize(d, cols);
    in.actions.resize(cols);
    in.taus.resize(cols);
    long c = 0;
    for (long i : idx) {
        for (int r = 0; r < reps; ++r, ++c) {
            in.states.col(c) = Eigen::Map<const Eigen::VectorXd>(data[i].state.data(), d);
            in.actions[c] = data[i].action;
            in.taus(c) = taus.empty() ? 0.5 : taus[c];
        }
    }
    return in;
}

/// Next-state inputs for the non-terminal transitions of a batch.
struct NextInputs {
    NetInput input;
    std::vector<long> column;  // first column of transition k in `input`, or -1 when terminal
};

inline NextInputs next_state_input(const Dataset& data, std::span<const long> idx, const std::vector<int>& next_actions,
                                   int reps, const std::vector<double>& taus) {
    NextInputs out;
    const long d = static_cast<long>(data[idx[0]].state.size());
    long live = 0;
    for (long i : idx) live += data[i].terminal ? 0 : 1;
    out.input.states.resize(d, live * reps);
    out.input.actions.resize(live * reps);
    out.input.taus.resize(live * reps);
    long c = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& tr = data[idx[k]];
        if (tr.terminal) {
            out.column.push_back(-1);
            continue;
        }
        out.column.push_back(c);
        for (int r = 0; r < reps; ++r, ++c) {
            out.input.states.col(c) = Eigen::Map<const Eigen::VectorXd>(tr.next_state.data(), d);
            out.input.actions[c] = next_actions[k];
            out.input.taus(c) = taus.empty() ? 0.5 : taus[k * reps + r];
        }
    }
    return out;
}

inline Eigen::MatrixXd forward_or_empty(const QuantileNet& net, const NetInput& in) {
    if (in.size() == 0) return Eigen::MatrixXd(net.architecture().output_dim, 0);
    return net.forward(in);
}

/// Shared loop: T iterations of epochs over minibatches, Adam steps and target refreshes.
template <typename BatchLoss>
void run_training(const Dataset& data, const TrainConfig& cfg, QuantileNet& online, QuantileNet& target,
                  BatchLoss&& batch_loss, Rng& rng) {
    const long n = static_cast<long>(data.size());
    if (cfg.data_split && n % cfg.iterations != 0) {
        throw ConfigError("with data_split the iteration count must divide the dataset size");
    }
    const long shard = cfg.data_split ? n / cfg.iterations : n;
    AdamState opt(online.parameter_count(), cfg.learning_rate);
    const long batches = (shard + cfg.batch_size - 1) / cfg.batch_size;
    const double total_steps = static_cast<double>(batches) * cfg.epochs_per_iteration * cfg.iterations;
    long step = 0;
    for (int t = 0; t < cfg.iterations; ++t) {
        std::vector<long> order(static_cast<std::size_t>(shard));
        std::iota(order.begin(), order.end(), cfg.data_split ? t * shard : 0L);
        for (int e = 0; e < cfg.epochs_per_iteration; ++e) {
            std::shuffle(order.begin(), order.end(), rng);
            for (long start = 0; start < shard; start += cfg.batch_size) {
                const long len = std::min<long>(cfg.batch_size, shard - start);
                const std::span<const long> idx(order.data() + start, static_cast<std::size_t>(len));
                LossAndGrad lg = batch_loss(idx, rng);
                ++step;
                if (!std::isfinite(lg.loss) || lg.loss > cfg.divergence_threshold || !lg.grad.allFinite()) {
                    throw TrainingDivergedError("training diverged", step, lg.loss);
                }
                opt.learning_rate =
                    cfg.learning_rate * (1.0 - (1.0 - cfg.final_lr_fraction) * static_cast<double>(step - 1) / total_steps);
                adam_step(online, lg.grad, opt);
                if (cfg.target_update.kind == TargetUpdate::Kind::kHardEvery && step % cfg.target_update.every == 0) {
                    target.params() = online.params();
                } else if (cfg.target_update.kind == TargetUpdate::Kind::kSoft) {
                    soft_update(target, online, cfg.target_update.rho);
                }
            }
        }
        if (cfg.target_update.kind == TargetUpdate::Kind::kPerIteration) target.params() = online.params();
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DQPOPE

/// Minibatch loss (1 / (B m m')) sum_{i,j,h} rho_{tau^h_i}(y^j_i - f(s_i, a_i, tau^h_i)) and its gradient.
///
/// Random draws per transition, in order: a' ~ pi(. | s'), u^1..u^m, tau^1..tau^m'.
/// Terminal transitions use y = r.
inline LossAndGrad dqpope_batch_loss(const QuantileNet& online, const QuantileNet& target, const Dataset& data,
                                     std::span<const long> idx, const PolicySpec& policy, const TrainConfig& cfg,
                                     Rng& rng) {
    const int m = cfg.m_target_samples;
    const int mq = cfg.m_quantile_levels;
    const int actions = online.architecture().action_count;
    const long batch = static_cast<long>(idx.size());
    std::vector<int> next_actions(idx.size());
    std::vector<double> us(idx.size() * m), taus(idx.size() * mq);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        next_actions[k] = policy.sample(data[idx[k]].next_state, actions, rng);
        for (int j = 0; j < m; ++j) us[k * m + j] = uniform_open(rng);
        for (int h = 0; h < mq; ++h) taus[k * mq + h] = uniform_open(rng);
    }
    const auto next = detail::next_state_input(data, idx, next_actions, m, us);
    const Eigen::MatrixXd next_values = detail::forward_or_empty(target, next.input);
    const auto cache = online.forward_cached(detail::state_action_input(data, idx, mq, taus));

    const double denom = static_cast<double>(batch) * m * mq;
    double loss = 0.0;
    Eigen::MatrixXd upstream(1, batch * mq);
    std::vector<double> ys(m);
    for (long k = 0; k < batch; ++k) {
        const auto& tr = data[idx[k]];
        const double r = detail::training_reward(tr, cfg);
        for (int j = 0; j < m; ++j) {
            ys[j] = next.column[k] < 0 ? r : r + cfg.gamma * next_values(0, next.column[k] + j);
        }
        for (int h = 0; h < mq; ++h) {
            const long c = k * mq + h;
            const double pred = cache.output(0, c);
            const double tau = taus[c];
            double g = 0.0;
            for (int j = 0; j < m; ++j) {
                const double u = ys[j] - pred;
                loss += pinball(u, tau);
                g -= pinball_grad(u, tau);
            }
            upstream(0, c) = g / denom;
        }
    }
    loss /= denom;
    return {loss, online.backward(cache, upstream)};
}

inline QuantileNet dqpope_train(const Dataset& data, const PolicySpec& policy, int action_count,
                                const TrainConfig& cfg, Rng& rng) {
    detail::check_dataset(data);
    cfg.validate();
    if (cfg.embedding == TauEmbedding::kNone) throw ConfigError("DQPOPE needs a quantile-level embedding");
    QuantileNet online(detail::architecture_for(data, action_count, cfg, cfg.embedding, 1), rng, cfg.init);
    QuantileNet target = online;
    detail::run_training(
        data, cfg, online, target,
        [&](std::span<const long> idx, Rng& g) { return dqpope_batch_loss(online, target, data, idx, policy, cfg, g); },
        rng);
    return online;
}

// ---------------------------------------------------------------------------
// DOPE

inline LossAndGrad dope_batch_loss(const QuantileNet& online, const QuantileNet& target, const Dataset& data,
                                   std::span<const long> idx, const PolicySpec& policy, const TrainConfig& cfg,
                                   Rng& rng) {
    const int actions = online.architecture().action_count;
    const long batch = static_cast<long>(idx.size());
    std::vector<int> next_actions(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) next_actions[k] = policy.sample(data[idx[k]].next_state, actions, rng);
    const auto next = detail::next_state_input(data, idx, next_actions, 1, {});
    const Eigen::MatrixXd next_values = detail::forward_or_empty(target, next.input);
    const auto cache = online.forward_cached(detail::state_action_input(data, idx, 1, {}));
    double loss = 0.0;
    Eigen::MatrixXd upstream(1, batch);
    for (long k = 0; k < batch; ++k) {
        const double r = detail::training_reward(data[idx[k]], cfg);
        const double y = next.column[k] < 0 ? r : r + cfg.gamma * next_values(0, next.column[k]);
        const double diff = cache.output(0, k) - y;
        loss += diff * diff;
        upstream(0, k) = 2.0 * diff / static_cast<double>(batch);
    }
    return {loss / static_cast<double>(batch), online.backward(cache, upstream)};
}

/// Fitted-Q evaluation; returns the Q network (single output, no quantile input).
inline QuantileNet dope_train(const Dataset& data, const PolicySpec& policy, int action_count, const TrainConfig& cfg,
                              Rng& rng) {
    detail::check_dataset(data);
    cfg.validate();
    QuantileNet online(detail::architecture_for(data, action_count, cfg, TauEmbedding::kNone, 1), rng, cfg.init);
    QuantileNet target = online;
    detail::run_training(
        data, cfg, online, target,
        [&](std::span<const long> idx, Rng& g) { return dope_batch_loss(online, target, data, idx, policy, cfg, g); },
        rng);
    return online;
}

/// Mean of Q(s0, a0) over initial draws.
inline double q_value_estimate(const QuantileNet& q, const std::vector<std::pair<State, int>>& initial_draws) {
    if (initial_draws.empty()) throw InputError("need at least one initial draw");
    return q.forward(make_input(initial_draws, {})).row(0).mean();
}

// ---------------------------------------------------------------------------
// DQOPE

/// Fixed-level quantile heads: output k estimates the levels[k]-quantile.
struct DiscreteQuantileModel {
    QuantileNet net;
    std::vector<double> levels;

    /// Mean of the uniform mixture of head values, averaged over initial draws.
    double value(const std::vector<std::pair<State, int>>& initial_draws) const {
        if (initial_draws.empty()) throw InputError("need at least one initial draw");
        return net.forward(make_input(initial_draws, {})).mean();
    }
};

inline void validate_levels(const std::vector<double>& levels) {
    if (levels.empty()) throw ConfigError("need at least one quantile level");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (!(levels[i] > 0.0 && levels[i] < 1.0)) throw ConfigError("quantile levels must lie in (0, 1)");
        if (i > 0 && !(levels[i] > levels[i - 1])) throw ConfigError("quantile levels must be strictly increasing");
    }
}

inline LossAndGrad dqope_batch_loss(const QuantileNet& online, const QuantileNet& target,
                                    const std::vector<double>& levels, const Dataset& data, std::span<const long> idx,
                                    const PolicySpec& policy, const TrainConfig& cfg, Rng& rng) {
    const int actions = online.architecture().action_count;
    const long batch = static_cast<long>(idx.size());
    const int m = static_cast<int>(levels.size());
    std::vector<int> next_actions(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) next_actions[k] = policy.sample(data[idx[k]].next_state, actions, rng);
    const auto next = detail::next_state_input(data, idx, next_actions, 1, {});
    const Eigen::MatrixXd next_values = detail::forward_or_empty(target, next.input);
    const auto cache = online.forward_cached(detail::state_action_input(data, idx, 1, {}));
    const double denom = static_cast<double>(batch) * m * m;
    double loss = 0.0;
    Eigen::MatrixXd upstream(m, batch);
    std::vector<double> ys(m);
    for (long k = 0; k < batch; ++k) {
        const double r = detail::training_reward(data[idx[k]], cfg);
        for (int j = 0; j < m; ++j) ys[j] = next.column[k] < 0 ? r : r + cfg.gamma * next_values(j, next.column[k]);
        for (int h = 0; h < m; ++h) {
            const double pred = cache.output(h, k);
            double g = 0.0;
            for (int j = 0; j < m; ++j) {
                loss += pinball(ys[j] - pred, levels[h]);
                g -= pinball_grad(ys[j] - pred, levels[h]);
            }
            upstream(h, k) = g / denom;
        }
    }
    return {loss / denom, online.backward(cache, upstream)};
}

inline DiscreteQuantileModel dqope_train(const Dataset& data, const PolicySpec& policy, int action_count,
                                         const std::vector<double>& levels, const TrainConfig& cfg, Rng& rng) {
    detail::check_dataset(data);
    cfg.validate();
    validate_levels(levels);
    QuantileNet online(
        detail::architecture_for(data, action_count, cfg, TauEmbedding::kNone, static_cast<int>(levels.size())), rng, cfg.init);
    QuantileNet target = online;
    detail::run_training(
        data, cfg, online, target,
        [&](std::span<const long> idx, Rng& g) {
            return dqope_batch_loss(online, target, levels, data, idx, policy, cfg, g);
        },
        rng);
    return {std::move(online), levels};
}

// ---------------------------------------------------------------------------
// CateOPE

struct CategoricalSupport {
    int atoms = 51;
    double v_min = -10.0;
    double v_max = 10.0;

    void validate() const {
        if (atoms < 2) throw ConfigError("categorical support needs at least two atoms");
        if (!(v_max > v_min)) throw ConfigError("categorical support needs v_max > v_min");
    }

    double spacing() const { return (v_max - v_min) / (atoms - 1); }

    std::vector<double> values() const {
        std::vector<double> z(atoms);
        for (int k = 0; k < atoms; ++k) z[k] = v_min + k * spacing();
        return z;
    }
};

/// Projects the law of r + gamma * Z, Z ~ (atoms, next_probs), back onto the atom grid by linear
/// interpolation after clipping to [v_min, v_max].
inline std::vector<double> cateope_project(double reward, double gamma, std::span<const double> next_probs,
                                           std::span<const double> atoms, double v_min, double v_max) {
    const int k = static_cast<int>(atoms.size());
    if (k < 2 || static_cast<int>(next_probs.size()) != k) throw InputError("projection needs matching atoms/probs");
    const double dz = (v_max - v_min) / (k - 1);
    std::vector<double> out(k, 0.0);
    for (int j = 0; j < k; ++j) {
        const double z = std::clamp(reward + gamma * atoms[j], v_min, v_max);
        double b = (z - v_min) / dz;
        // Snap grid points that rounding moved off the lattice.
        if (std::abs(b - std::round(b)) < 1e-9) b = std::round(b);
        b = std::clamp(b, 0.0, static_cast<double>(k - 1));
        const int lo = static_cast<int>(std::floor(b));
        const int hi = static_cast<int>(std::ceil(b));
        if (lo == hi) {
            out[lo] += next_probs[j];
        } else {
            out[lo] += next_probs[j] * (hi - b);
            out[hi] += next_probs[j] * (b - lo);
        }
    }
    return out;
}

struct CategoricalModel {
    QuantileNet net;
    CategoricalSupport support;

    static Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
        const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
        return e / e.sum();
    }

    Eigen::VectorXd probabilities(std::span<const double> state, int action) const {
        return softmax(net.forward_heads(state, action));
    }

    /// Mean of sum_k z_k p_k(s0, a0) over initial draws.
    double value(const std::vector<std::pair<State, int>>& initial_draws) const {
        if (initial_draws.empty()) throw InputError("need at least one initial draw");
        const auto z = support.values();
        const Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<long>(z.size()));
        const Eigen::MatrixXd logits = net.forward(make_input(initial_draws, {}));
        double acc = 0.0;
        for (long c = 0; c < logits.cols(); ++c) acc += zv.dot(softmax(logits.col(c)));
        return acc / static_cast<double>(logits.cols());
    }
};

inline LossAndGrad cateope_batch_loss(const QuantileNet& online, const QuantileNet& target,
                                      const CategoricalSupport& support, const Dataset& data,
                                      std::span<const long> idx, const PolicySpec& policy, const TrainConfig& cfg,
                                      Rng& rng) {
    const int actions = online.architecture().action_count;
    const long batch = static_cast<long>(idx.size());
    const auto atoms = support.values();
    const int k = support.atoms;
    std::vector<int> next_actions(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) next_actions[i] = policy.sample(data[idx[i]].next_state, actions, rng);
    const auto next = detail::next_state_input(data, idx, next_actions, 1, {});
    const Eigen::MatrixXd next_logits = detail::forward_or_empty(target, next.input);
    const auto cache = online.forward_cached(detail::state_action_input(data, idx, 1, {}));
    const std::vector<double> dirac_zero = [&] {
        std::vector<double> p(k, 0.0);
        p[0] = 1.0;
        return p;
    }();
    double loss = 0.0;
    Eigen::MatrixXd upstream(k, batch);
    for (long i = 0; i < batch; ++i) {
        const double r = detail::training_reward(data[idx[i]], cfg);
        std::vector<double> projected;
        if (next.column[i] < 0) {
            // Terminal: the continuation is identically zero, so every atom maps to r.
            projected = cateope_project(r, 0.0, dirac_zero, atoms, support.v_min, support.v_max);
        } else {
            const Eigen::VectorXd p_next = CategoricalModel::softmax(next_logits.col(next.column[i]));
            projected = cateope_project(r, cfg.gamma, std::span<const double>(p_next.data(), k), atoms, support.v_min,
                                        support.v_max);
        }
        const Eigen::VectorXd logits = cache.output.col(i);
        const double shift = logits.maxCoeff();
        const double log_z = shift + std::log((logits.array() - shift).exp().sum());
        for (int j = 0; j < k; ++j) {
            const double log_p = logits(j) - log_z;
            loss -= projected[j] * log_p;
            upstream(j, i) = (std::exp(log_p) - projected[j]) / static_cast<double>(batch);
        }
    }
    return {loss / static_cast<double>(batch), online.backward(cache, upstream)};
}

inline CategoricalModel cateope_train(const Dataset& data, const PolicySpec& policy, int action_count,
                                      const CategoricalSupport& support, const TrainConfig& cfg, Rng& rng) {
    detail::check_dataset(data);
    cfg.validate();
    support.validate();
    QuantileNet online(detail::architecture_for(data, action_count, cfg, TauEmbedding::kNone, support.atoms), rng, cfg.init);
    QuantileNet target = online;
    detail::run_training(
        data, cfg, online, target,
        [&](std::span<const long> idx, Rng& g) {
            return cateope_batch_loss(online, target, support, data, idx, policy, cfg, g);
        },
        rng);
    return {std::move(online), support};
}

// ---------------------------------------------------------------------------
// Importance-sampling estimators

namespace detail {

inline double step_ratio(const EpisodeStep& st, const PolicySpec& target, const PolicySpec& behavior, int actions) {
    const double pb = behavior.probs(st.state, actions)[st.action];
    if (!(pb > 0.0)) throw DegenerateRatioError("behavior policy assigns zero probability to a logged action");
    return target.probs(st.state, actions)[st.action] / pb;
}

}  // namespace detail

/// Per-decision weighted importance sampling:
/// V = (1/N) sum_i sum_t gamma^t (rho^i_{1:t} / omega_t) r^i_t, omega_t = mean_i rho^i_{1:t}.
/// Episodes that ended before step t keep their final cumulative ratio in omega_t.
inline double wis_estimate(const std::vector<Episode>& episodes, const PolicySpec& target, const PolicySpec& behavior,
                           int action_count, double gamma) {
    if (episodes.empty()) throw InputError("WIS needs at least one episode");
    std::size_t horizon = 0;
    std::vector<std::vector<double>> cumulative(episodes.size());
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        double w = 1.0;
        for (const auto& st : episodes[i]) {
            w *= detail::step_ratio(st, target, behavior, action_count);
            cumulative[i].push_back(w);
        }
        horizon = std::max(horizon, episodes[i].size());
    }
    std::vector<double> omega(horizon, 0.0);
    for (std::size_t t = 0; t < horizon; ++t) {
        for (const auto& c : cumulative) omega[t] += c.empty() ? 1.0 : c[std::min(t, c.size() - 1)];
        omega[t] /= static_cast<double>(episodes.size());
    }
    double total = 0.0;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        double discount = 1.0;
        for (std::size_t t = 0; t < episodes[i].size(); ++t) {
            if (omega[t] > 0.0) total += discount * cumulative[i][t] / omega[t] * episodes[i][t].reward;
            discount *= gamma;
        }
    }
    return total / static_cast<double>(episodes.size());
}

using QFunction = std::function<double(const State&, int)>;

inline QFunction q_function(const QuantileNet& q) {
    return [&q](const State& s, int a) { return q.forward_heads(s, a)(0); };
}

/// Doubly robust estimate: per episode, backward recursion
/// V_DR <- V(s_t) + rho_t (r_t + gamma V_DR - Q(s_t, a_t)) from V_DR = 0, averaged over episodes.
inline double dr_estimate(const std::vector<Episode>& episodes, const PolicySpec& target, const PolicySpec& behavior,
                          int action_count, const QFunction& q, double gamma) {
    if (episodes.empty()) throw InputError("DR needs at least one episode");
    double total = 0.0;
    for (const auto& ep : episodes) {
        double v_dr = 0.0;
        for (auto it = ep.rbegin(); it != ep.rend(); ++it) {
            const double ratio = detail::step_ratio(*it, target, behavior, action_count);
            const auto pi = target.probs(it->state, action_count);
            double v_hat = 0.0;
            for (int a = 0; a < action_count; ++a) {
                if (pi[a] > 0.0) v_hat += pi[a] * q(it->state, a);
            }
            v_dr = v_hat + ratio * (it->reward + gamma * v_dr - q(it->state, it->action));
        }
        total += v_dr;
    }
    return total / static_cast<double>(episodes.size());
}

/// Plain per-decision importance sampling, sum_t gamma^t rho_{1:t} r_t averaged over episodes.
inline double per_decision_is_estimate(const std::vector<Episode>& episodes, const PolicySpec& target,
                                       const PolicySpec& behavior, int action_count, double gamma) {
    if (episodes.empty()) throw InputError("IS needs at least one episode");
    double total = 0.0;
    for (const auto& ep : episodes) {
        double w = 1.0, discount = 1.0;
        for (const auto& st : ep) {
            w *= detail::step_ratio(st, target, behavior, action_count);
            total += discount * w * st.reward;
            discount *= gamma;
        }
    }
    return total / static_cast<double>(episodes.size());
}

// ---------------------------------------------------------------------------
// Quantile curves

struct QuantileCurvePoint {
    double tau;
    double value;
};

/// f(state, action, tau) on the given levels.
inline std::vector<QuantileCurvePoint> quantile_curve(const QuantileNet& net, std::span<const double> state, int action,
                                                      const std::vector<double>& levels) {
    std::vector<std::pair<State, int>> draws(levels.size(), {State(state.begin(), state.end()), action});
    const Eigen::RowVectorXd out = net.forward(make_input(draws, levels)).row(0);
    std::vector<QuantileCurvePoint> curve;
    for (std::size_t i = 0; i < levels.size(); ++i) curve.push_back({levels[i], out(static_cast<long>(i))});
    return curve;
}

inline void write_quantile_curve_csv(std::ostream& out, const std::vector<QuantileCurvePoint>& curve) {
    csv::Writer w(out, {"tau", "value"});
    for (const auto& p : curve) w.row() << p.tau << p.value;
}

}  // namespace dqpope
