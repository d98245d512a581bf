#pragma once

// Environments, policies, offline data collection and Monte-Carlo return oracles.

#include <algorithm>
#include <cmath>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csv.hpp"
#include "errors.hpp"
#include "random.hpp"
#include "tabular_oracle.hpp"
#include "types.hpp"

namespace dqpope {

// ---------------------------------------------------------------------------
// Policies

enum class PolicyKind { kUniformRandom, kFixedAction, kMixture, kHeuristicCartpole, kTabularStochastic };

/// Discrete-action policy. Value type; mixtures hold their base policy by shared pointer.
class PolicySpec {
public:
    static PolicySpec uniform_random() { return PolicySpec(PolicyKind::kUniformRandom); }

    static PolicySpec fixed_action(int action) {
        if (action < 0) throw ConfigError("fixed-action policy needs a non-negative action");
        PolicySpec p(PolicyKind::kFixedAction);
        p.action_ = action;
        return p;
    }

    /// With probability `weight` act as `base`, otherwise uniformly at random.
    static PolicySpec mixture(PolicySpec base, double weight) {
        if (!(weight >= 0.0 && weight <= 1.0)) throw ConfigError("mixture weight must lie in [0, 1]");
        PolicySpec p(PolicyKind::kMixture);
        p.weight_ = weight;
        p.base_ = std::make_shared<const PolicySpec>(std::move(base));
        return p;
    }

    /// Push toward sign(angle + 0.5 * angular_velocity): action 1 (right) when positive.
    static PolicySpec heuristic_cartpole() { return PolicySpec(PolicyKind::kHeuristicCartpole); }

    /// table[s][a]; the state index is the position of the largest component of the (one-hot) state.
    static PolicySpec tabular(std::vector<std::vector<double>> table) {
        for (const auto& row : table) {
            double total = 0.0;
            for (double x : row) {
                if (x < 0.0) throw ConfigError("policy probabilities must be non-negative");
                total += x;
            }
            if (row.empty() || std::abs(total - 1.0) > 1e-9) throw ConfigError("policy row must sum to 1");
        }
        if (table.empty()) throw ConfigError("tabular policy needs at least one state");
        PolicySpec p(PolicyKind::kTabularStochastic);
        p.table_ = std::move(table);
        return p;
    }

    PolicyKind kind() const noexcept { return kind_; }
    double weight() const noexcept { return weight_; }
    const PolicySpec* base() const noexcept { return base_.get(); }
    const std::vector<std::vector<double>>& table() const noexcept { return table_; }

    /// Action probabilities at `state`; non-negative and summing to 1.
    std::vector<double> probs(std::span<const double> state, int action_count) const {
        std::vector<double> out(action_count, 0.0);
        switch (kind_) {
            case PolicyKind::kUniformRandom:
                std::fill(out.begin(), out.end(), 1.0 / action_count);
                break;
            case PolicyKind::kFixedAction:
                if (action_ >= action_count) throw ConfigError("fixed action out of range for environment");
                out[action_] = 1.0;
                break;
            case PolicyKind::kMixture: {
                const auto inner = base_->probs(state, action_count);
                for (int a = 0; a < action_count; ++a) {
                    out[a] = weight_ * inner[a] + (1.0 - weight_) / action_count;
                }
                break;
            }
            case PolicyKind::kHeuristicCartpole: {
                if (state.size() < 4 || action_count != 2) {
                    throw ConfigError("heuristic-cartpole policy requires the cartpole environment");
                }
                out[state[2] + 0.5 * state[3] > 0.0 ? 1 : 0] = 1.0;
                break;
            }
            case PolicyKind::kTabularStochastic: {
                const auto s = static_cast<std::size_t>(
                    std::distance(state.begin(), std::max_element(state.begin(), state.end())));
                if (s >= table_.size() || static_cast<int>(table_[s].size()) != action_count) {
                    throw ConfigError("tabular policy does not match environment dimensions");
                }
                out = table_[s];
                break;
            }
        }
        return out;
    }

    int sample(std::span<const double> state, int action_count, Rng& rng) const {
        if (kind_ == PolicyKind::kMixture) {
            // Same law as probs(), but keeps the base policy's choice when it is deterministic.
            if (uniform_open(rng) < weight_) return base_->sample(state, action_count, rng);
            return std::min(static_cast<int>(uniform_open(rng) * action_count), action_count - 1);
        }
        return sample_index(probs(state, action_count), rng);
    }

private:
    explicit PolicySpec(PolicyKind kind) : kind_(kind) {}

    PolicyKind kind_;
    int action_ = 0;
    double weight_ = 1.0;
    std::shared_ptr<const PolicySpec> base_;
    std::vector<std::vector<double>> table_;
};

// ---------------------------------------------------------------------------
// Environments

struct RewardNoise {
    enum class Distribution { kNormal, kStudentT };
    Distribution distribution = Distribution::kNormal;
    double sigma = 0.0;  // kNormal
    double df = 1.0;     // kStudentT

    static RewardNoise normal(double sigma) { return {Distribution::kNormal, sigma, 1.0}; }
    static RewardNoise student_t(double df) { return {Distribution::kStudentT, 0.0, df}; }

    void validate() const {
        if (distribution == Distribution::kStudentT && !(df > 0.0)) {
            throw ConfigError("student-t degrees of freedom must be positive");
        }
        if (distribution == Distribution::kNormal && !(sigma >= 0.0)) {
            throw ConfigError("normal noise sigma must be non-negative");
        }
    }

    double sample(Rng& rng) const {
        if (distribution == Distribution::kStudentT) return sample_student_t(df, rng);
        return sigma == 0.0 ? 0.0 : sigma * standard_normal(rng);
    }

    std::string label() const {
        if (distribution == Distribution::kNormal) {
            return "N(0," + csv::format_number(sigma * sigma) + ")";
        }
        return "t(" + csv::format_number(df) + ")";
    }
};

struct StepResult {
    State next_state;
    double reward = 0.0;
    bool terminal = false;
};

/// Immutable environment handle; all randomness comes from the caller's generator.
class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string name() const = 0;
    virtual int state_dim() const = 0;
    virtual int action_count() const = 0;
    virtual State initial_state(Rng& rng) const = 0;
    virtual StepResult step(const State& state, int action, Rng& rng) const = 0;

    double gamma() const noexcept { return gamma_; }
    int horizon_cap() const noexcept { return horizon_cap_; }

protected:
    Environment(double gamma, int horizon_cap) : gamma_(gamma), horizon_cap_(horizon_cap) {
        if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("discount factor must lie in (0, 1)");
        if (horizon_cap < 1) throw ConfigError("horizon cap must be positive");
    }

private:
    double gamma_;
    int horizon_cap_;
};

using EnvHandle = std::shared_ptr<const Environment>;

/// One-step episodic environment: x0 -> terminal x1 with reward base_value + noise.
class ToyEnvironment final : public Environment {
public:
    ToyEnvironment(std::optional<RewardNoise> noise, double base_value, double gamma)
        : Environment(gamma, 1), noise_(noise), base_value_(base_value) {
        if (noise_) noise_->validate();
    }

    std::string name() const override { return "toy-two-state"; }
    int state_dim() const override { return 1; }
    int action_count() const override { return 1; }
    State initial_state(Rng&) const override { return {0.0}; }

    StepResult step(const State&, int action, Rng& rng) const override {
        if (action != 0) throw InputError("toy environment has a single action");
        return {{1.0}, base_value_ + (noise_ ? noise_->sample(rng) : 0.0), true};
    }

    double base_value() const noexcept { return base_value_; }

private:
    std::optional<RewardNoise> noise_;
    double base_value_;
};

/// Classic cart-pole with Euler integration. State: (x, x_dot, theta, theta_dot).
class CartpoleEnvironment final : public Environment {
public:
    static constexpr double kGravity = 9.8;
    static constexpr double kCartMass = 1.0;
    static constexpr double kPoleMass = 0.1;
    static constexpr double kHalfLength = 0.5;
    static constexpr double kForce = 10.0;
    static constexpr double kTimestep = 0.02;
    static constexpr double kAngleLimit = 0.2095;
    static constexpr double kPositionLimit = 2.4;

    explicit CartpoleEnvironment(double gamma = 0.99, int horizon_cap = 500,
                                 std::optional<RewardNoise> noise = std::nullopt)
        : Environment(gamma, horizon_cap), noise_(noise) {
        if (noise_) noise_->validate();
    }

    std::string name() const override { return "cartpole"; }
    int state_dim() const override { return 4; }
    int action_count() const override { return 2; }

    State initial_state(Rng& rng) const override {
        State s(4);
        for (double& x : s) x = -0.05 + 0.1 * uniform_open(rng);
        return s;
    }

    StepResult step(const State& state, int action, Rng& rng) const override {
        if (action != 0 && action != 1) throw InputError("cartpole action must be 0 or 1");
        State next = dynamics(state, action);
        const bool failed = std::abs(next[0]) > kPositionLimit || std::abs(next[2]) > kAngleLimit;
        double reward = failed ? 0.0 : 1.0;
        if (noise_) reward += noise_->sample(rng);
        return {std::move(next), reward, failed};
    }

    /// Deterministic Euler step of the cart-pole equations of motion.
    static State dynamics(const State& s, int action) {
        const double force = action == 1 ? kForce : -kForce;
        const double total_mass = kCartMass + kPoleMass;
        const double pole_moment = kPoleMass * kHalfLength;
        const double cos_t = std::cos(s[2]);
        const double sin_t = std::sin(s[2]);
        const double temp = (force + pole_moment * s[3] * s[3] * sin_t) / total_mass;
        const double theta_acc =
            (kGravity * sin_t - cos_t * temp) /
            (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_t * cos_t / total_mass));
        const double x_acc = temp - pole_moment * theta_acc * cos_t / total_mass;
        return {s[0] + kTimestep * s[1], s[1] + kTimestep * x_acc, s[2] + kTimestep * s[3],
                s[3] + kTimestep * theta_acc};
    }

private:
    std::optional<RewardNoise> noise_;
};

/// Simulator over a TabularMdp. States are one-hot vectors of length n_states.
class TabularEnvironment final : public Environment {
public:
    TabularEnvironment(TabularMdp mdp, int horizon_cap, std::optional<RewardNoise> noise = std::nullopt)
        : Environment(mdp.gamma, horizon_cap), mdp_(std::move(mdp)), noise_(noise) {
        mdp_.validate();
        if (noise_) noise_->validate();
    }

    std::string name() const override { return "tabular"; }
    int state_dim() const override { return mdp_.n_states; }
    int action_count() const override { return mdp_.n_actions; }
    const TabularMdp& mdp() const noexcept { return mdp_; }

    State one_hot(int s) const {
        State out(mdp_.n_states, 0.0);
        out[s] = 1.0;
        return out;
    }

    static int state_index(const State& s) {
        return static_cast<int>(std::distance(s.begin(), std::max_element(s.begin(), s.end())));
    }

    State initial_state(Rng& rng) const override { return one_hot(sample_index(mdp_.initial_distribution(), rng)); }

    StepResult step(const State& state, int action, Rng& rng) const override {
        const int s = state_index(state);
        const auto& law = mdp_.reward[s][action];
        double reward = law.atoms()[sample_index(law.probs(), rng)];
        if (noise_) reward += noise_->sample(rng);
        return {one_hot(sample_index(mdp_.transition[s][action], rng)), reward, false};
    }

private:
    TabularMdp mdp_;
    std::optional<RewardNoise> noise_;
};

inline EnvHandle make_toy_env(std::optional<RewardNoise> noise, double base_value = 0.0, double gamma = 0.99) {
    return std::make_shared<const ToyEnvironment>(noise, base_value, gamma);
}

inline EnvHandle make_cartpole_env(double gamma = 0.99, int horizon_cap = 500,
                                   std::optional<RewardNoise> noise = std::nullopt) {
    return std::make_shared<const CartpoleEnvironment>(gamma, horizon_cap, noise);
}

inline EnvHandle make_tabular_env(TabularMdp mdp, int horizon_cap, std::optional<RewardNoise> noise = std::nullopt) {
    return std::make_shared<const TabularEnvironment>(std::move(mdp), horizon_cap, noise);
}

// ---------------------------------------------------------------------------
// Data collection and oracles

/// Step that also ends the episode when the horizon cap is reached at step index t.
inline StepResult capped_step(const Environment& env, const State& s, int action, int t, Rng& rng) {
    StepResult r = env.step(s, action, rng);
    if (t + 1 >= env.horizon_cap()) r.terminal = true;
    return r;
}

/// n i.i.d. transitions from the behavior policy's discounted occupancy: draw a geometric(1 - gamma)
/// time index, roll a fresh trajectory to it (redrawing when the episode ends first) and record the
/// transition taken there.
inline Dataset collect_dataset(const Environment& env, const PolicySpec& behavior, long n, Rng& rng) {
    if (n < 1) throw InputError("dataset size must be at least 1");
    Dataset data;
    data.reserve(static_cast<std::size_t>(n));
    const int actions = env.action_count();
    while (static_cast<long>(data.size()) < n) {
        const long index = sample_geometric(1.0 - env.gamma(), rng);
        if (index >= env.horizon_cap()) continue;
        State s = env.initial_state(rng);
        bool reached = true;
        for (long t = 0; t < index; ++t) {
            StepResult r = capped_step(env, s, behavior.sample(s, actions, rng), static_cast<int>(t), rng);
            if (r.terminal) {
                reached = false;
                break;
            }
            s = std::move(r.next_state);
        }
        if (!reached) continue;
        const int a = behavior.sample(s, actions, rng);
        StepResult r = capped_step(env, s, a, static_cast<int>(index), rng);
        data.push_back({std::move(s), a, r.reward, std::move(r.next_state), r.terminal});
    }
    return data;
}

/// Sorted discounted returns of n_rollouts episodes from the initial-state distribution.
inline ReturnDistribution mc_return_distribution(const Environment& env, const PolicySpec& target, long n_rollouts,
                                                 Rng& rng) {
    if (n_rollouts < 1) throw InputError("need at least one rollout");
    std::vector<double> returns;
    returns.reserve(static_cast<std::size_t>(n_rollouts));
    for (long i = 0; i < n_rollouts; ++i) {
        State s = env.initial_state(rng);
        double ret = 0.0;
        double discount = 1.0;
        for (int t = 0;; ++t) {
            StepResult r = capped_step(env, s, target.sample(s, env.action_count(), rng), t, rng);
            ret += discount * r.reward;
            if (r.terminal) break;
            discount *= env.gamma();
            s = std::move(r.next_state);
        }
        returns.push_back(ret);
    }
    return ReturnDistribution(std::move(returns));
}

/// (s0, a0) pairs with s0 from the initial-state distribution and a0 ~ policy(. | s0).
inline std::vector<std::pair<State, int>> initial_draws(const Environment& env, const PolicySpec& policy, long k,
                                                        Rng& rng) {
    std::vector<std::pair<State, int>> out;
    out.reserve(static_cast<std::size_t>(k));
    for (long i = 0; i < k; ++i) {
        State s = env.initial_state(rng);
        const int a = policy.sample(s, env.action_count(), rng);
        out.emplace_back(std::move(s), a);
    }
    return out;
}

struct EpisodeStep {
    State state;
    int action = 0;
    double reward = 0.0;
};

using Episode = std::vector<EpisodeStep>;

/// Whole episodes from the initial-state distribution, run until termination or the horizon cap.
inline std::vector<Episode> collect_episodes(const Environment& env, const PolicySpec& behavior, long n, Rng& rng) {
    std::vector<Episode> out;
    out.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        Episode ep;
        State s = env.initial_state(rng);
        for (int t = 0;; ++t) {
            const int a = behavior.sample(s, env.action_count(), rng);
            StepResult r = capped_step(env, s, a, t, rng);
            ep.push_back({s, a, r.reward});
            if (r.terminal) break;
            s = std::move(r.next_state);
        }
        out.push_back(std::move(ep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset CSV: s0..s{d-1}, action, reward, ns0..ns{d-1}, terminal

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
    if (data.empty()) throw InputError("cannot serialize an empty dataset");
    const std::size_t d = data.front().state.size();
    std::vector<std::string> header;
    for (std::size_t i = 0; i < d; ++i) header.push_back("s" + std::to_string(i));
    header.insert(header.end(), {"action", "reward"});
    for (std::size_t i = 0; i < d; ++i) header.push_back("ns" + std::to_string(i));
    header.push_back("terminal");
    csv::Writer w(out, header);
    for (const auto& tr : data) {
        auto row = w.row();
        for (double x : tr.state) row << x;
        row << tr.action << tr.reward;
        for (double x : tr.next_state) row << x;
        row << (tr.terminal ? 1 : 0);
    }
}

inline Dataset read_dataset_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("dataset CSV is empty");
    std::size_t columns = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    if (columns < 5 || (columns - 3) % 2 != 0) throw InputError("dataset CSV header has an unexpected width");
    const std::size_t d = (columns - 3) / 2;
    Dataset data;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
        if (cells.size() != columns) throw InputError("dataset CSV row has the wrong number of cells");
        Transition tr;
        tr.state.assign(cells.begin(), cells.begin() + static_cast<long>(d));
        tr.action = static_cast<int>(cells[d]);
        tr.reward = cells[d + 1];
        tr.next_state.assign(cells.begin() + static_cast<long>(d + 2), cells.begin() + static_cast<long>(2 * d + 2));
        tr.terminal = cells.back() != 0.0;
        data.push_back(std::move(tr));
    }
    return data;
}

}  // namespace dqpope
