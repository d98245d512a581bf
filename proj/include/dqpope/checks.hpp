#pragma once

// Self-contained property suites shared by the CLI `check` command and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "csv.hpp"
#include "envs.hpp"
#include "estimators.hpp"
#include "neural.hpp"
#include "random.hpp"
#include "tabular_oracle.hpp"

namespace dqpope::checks {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Worst relative error between backward() and central differences over `probes` random parameters.
inline double gradient_error(const NetArchitecture& arch, std::uint64_t seed, int probes = 50, long batch = 4) {
    Rng rng = make_rng(seed);
    QuantileNet net(arch);
    for (long i = 0; i < net.parameter_count(); ++i) net.params()(i) = -0.5 + uniform_open(rng);
    NetInput in;
    in.states.resize(arch.state_dim, batch);
    in.taus.resize(batch);
    for (long j = 0; j < batch; ++j) {
        for (int i = 0; i < arch.state_dim; ++i) in.states(i, j) = standard_normal(rng);
        in.actions.push_back(std::min(static_cast<int>(uniform_open(rng) * arch.action_count), arch.action_count - 1));
        in.taus(j) = uniform_open(rng);
    }
    Eigen::MatrixXd upstream(arch.output_dim, batch);
    for (long i = 0; i < upstream.size(); ++i) upstream(i) = standard_normal(rng);
    const Eigen::VectorXd grad = net.backward(net.forward_cached(in), upstream);
    auto objective = [&](const QuantileNet& n) { return n.forward(in).cwiseProduct(upstream).sum(); };

    const double h = 1e-5;
    double worst = 0.0;
    for (int t = 0; t < probes; ++t) {
        const long p = std::min(static_cast<long>(uniform_open(rng) * net.parameter_count()), net.parameter_count() - 1);
        QuantileNet plus = net, minus = net;
        plus.params()(p) += h;
        minus.params()(p) -= h;
        const double fd = (objective(plus) - objective(minus)) / (2 * h);
        const double scale = std::max({std::abs(fd), std::abs(grad(p)), 1e-7});
        worst = std::max(worst, std::abs(fd - grad(p)) / scale);
    }
    return worst;
}

inline CheckResult gradient_suite() {
    double worst = 0.0;
    std::uint64_t seed = 4100;
    for (auto mode : {TauEmbedding::kConcatScalar, TauEmbedding::kCosine}) {
        for (const std::vector<int>& hidden : {std::vector<int>{12, 12}, std::vector<int>{64, 64, 64}}) {
            NetArchitecture a;
            a.state_dim = 4;
            a.action_count = 2;
            a.hidden = hidden;
            a.embedding = mode;
            a.cosine_order = 16;
            worst = std::max(worst, gradient_error(a, ++seed));
        }
    }
    return {"gradient finite differences", worst < 1e-4, "max relative error " + csv::format_number(worst)};
}

inline CheckResult projection_suite(int triples = 10000) {
    const CategoricalSupport s{51, -10.0, 10.0};
    const auto atoms = s.values();
    Rng rng = make_rng(4200);
    double worst = 0.0;
    bool non_negative = true;
    for (int i = 0; i < triples; ++i) {
        const double r = 8.0 * standard_normal(rng);
        const double gamma = uniform_open(rng);
        std::vector<double> p(atoms.size());
        double total = 0.0;
        for (double& x : p) total += (x = -std::log(uniform_open(rng)));
        for (double& x : p) x /= total;
        const auto out = cateope_project(r, gamma, p, atoms, s.v_min, s.v_max);
        double mass = 0.0;
        for (double x : out) {
            non_negative = non_negative && x >= 0.0;
            mass += x;
        }
        worst = std::max(worst, std::abs(mass - 1.0));
    }

    const CategoricalSupport small{11, -5.0, 5.0};
    const auto z = small.values();
    std::vector<double> p(11);
    for (int k = 0; k < 11; ++k) p[k] = (k + 1) / 66.0;
    const bool identity = cateope_project(0.0, 1.0, p, z, small.v_min, small.v_max) == p;
    const auto clipped = cateope_project(1e3, 0.9, p, z, small.v_min, small.v_max);
    bool full_clip = std::abs(clipped[10] - 1.0) < 1e-15;
    for (int k = 0; k < 10; ++k) full_clip = full_clip && clipped[k] == 0.0;
    std::vector<double> point(11, 0.0);
    point[4] = 1.0;
    const auto split = cateope_project(0.5 * small.spacing(), 1.0, point, z, small.v_min, small.v_max);
    const bool half = split[4] == 0.5 && split[5] == 0.5;

    const bool ok = worst <= 1e-9 && non_negative && identity && full_clip && half;
    return {"categorical projection", ok,
            "max mass error " + csv::format_number(worst) + ", identity " + (identity ? "ok" : "FAIL") +
                ", full-clip " + (full_clip ? "ok" : "FAIL") + ", half-split " + (half ? "ok" : "FAIL")};
}

inline std::vector<CheckResult> contraction_suite(int trials = 200, std::uint64_t seed = 4300) {
    std::vector<CheckResult> out;
    Rng rng = make_rng(seed);
    for (double gamma : {0.5, 0.9}) {
        for (int p : {1, 2}) {
            const auto s = contraction_trials(gamma, p, trials, rng);
            out.push_back({"contraction gamma=" + csv::format_number(gamma) + " p=" + std::to_string(p),
                           s.violations == 0,
                           "max ratio " + csv::format_number(s.max_ratio) + " <= bound " + csv::format_number(s.bound) +
                               " (" + std::to_string(s.trials - s.skipped) + " trials, " +
                               std::to_string(s.skipped) + " skipped)"});
        }
    }
    return out;
}

/// Two states, two actions, action-dependent rewards and dynamics.
inline TabularMdp two_state_mdp(double gamma) {
    TabularMdp mdp;
    mdp.n_states = 2;
    mdp.n_actions = 2;
    mdp.gamma = gamma;
    mdp.transition = {{{0.9, 0.1}, {0.2, 0.8}}, {{0.5, 0.5}, {0.1, 0.9}}};
    mdp.reward = {{DiscreteReturnLaw::dirac(0.0), DiscreteReturnLaw::dirac(1.0)},
                  {DiscreteReturnLaw::dirac(2.0), DiscreteReturnLaw({0.0, 4.0}, {0.5, 0.5})}};
    mdp.target_policy = {{0.2, 0.8}, {0.7, 0.3}};
    mdp.initial = {1.0, 0.0};
    return mdp;
}

inline CheckResult wis_suite(long episodes = 100000) {
    const auto mdp = two_state_mdp(0.5);
    const double truth = exact_policy_value(mdp, mdp.target_policy);
    const auto env = make_tabular_env(mdp, 50);
    Rng rng = make_rng(4400);
    const auto behavior = PolicySpec::uniform_random();
    const auto eps = collect_episodes(*env, behavior, episodes, rng);
    const double v = wis_estimate(eps, PolicySpec::tabular(mdp.target_policy), behavior, 2, mdp.gamma);
    const double rel = std::abs(v - truth) / std::abs(truth);
    return {"WIS vs exact value", rel <= 0.02,
            "estimate " + csv::format_number(v) + ", truth " + csv::format_number(truth) + ", relative error " +
                csv::format_number(rel)};
}

inline CheckResult dr_suite(long episodes = 2000) {
    auto mdp = two_state_mdp(0.5);
    mdp.target_policy = {{0.0, 1.0}, {1.0, 0.0}};
    const auto q_table = exact_q_values(mdp, mdp.target_policy);
    const QFunction q = [&](const State& s, int a) {
        return q_table[mdp.index(TabularEnvironment::state_index(s), a)];
    };
    const auto env = make_tabular_env(mdp, 50);
    const auto policy = PolicySpec::tabular(mdp.target_policy);
    Rng rng = make_rng(4500);
    const auto eps = collect_episodes(*env, policy, episodes, rng);
    double worst = 0.0;
    for (const auto& ep : eps) {
        double g = 0.0, discount = 1.0;
        for (const auto& st : ep) {
            g += discount * st.reward;
            discount *= mdp.gamma;
        }
        worst = std::max(worst, std::abs(dr_estimate({ep}, policy, policy, 2, q, mdp.gamma) - g));
    }
    return {"DR exact-Q on-policy identity", worst <= 1e-9, "max per-episode gap " + csv::format_number(worst)};
}

inline std::vector<CheckResult> all_fast_checks() {
    std::vector<CheckResult> out = contraction_suite();
    out.push_back(gradient_suite());
    out.push_back(projection_suite());
    out.push_back(wis_suite());
    out.push_back(dr_suite());
    return out;
}

}  // namespace dqpope::checks
