#pragma once

// Exact distributional Bellman iteration on finite MDPs whose return laws have
// finite support. Used as ground truth for contraction and fixed-point tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "random.hpp"

namespace dqpope {

inline constexpr double kAtomMergeTolerance = 1e-12;
inline constexpr std::size_t kDefaultAtomCap = 1'000'000;

/// Finitely supported law on the real line: strictly increasing atoms with matching probabilities.
class DiscreteReturnLaw {
public:
    DiscreteReturnLaw() : atoms_{0.0}, probs_{1.0} {}

    /// Sorts the (atom, probability) pairs and merges atoms closer than 1e-12.
    DiscreteReturnLaw(std::vector<double> atoms, std::vector<double> probs) {
        if (atoms.size() != probs.size() || atoms.empty()) {
            throw InputError("discrete law needs matching, non-empty atom and probability lists");
        }
        std::vector<std::pair<double, double>> pairs;
        pairs.reserve(atoms.size());
        for (std::size_t i = 0; i < atoms.size(); ++i) {
            if (!(probs[i] >= 0.0) || !std::isfinite(atoms[i])) {
                throw InputError("discrete law needs finite atoms and non-negative probabilities");
            }
            pairs.emplace_back(atoms[i], probs[i]);
        }
        assign_merged(std::move(pairs));
    }

    static DiscreteReturnLaw dirac(double x) { return DiscreteReturnLaw({x}, {1.0}); }

    static DiscreteReturnLaw from_pairs(std::vector<std::pair<double, double>> pairs) {
        DiscreteReturnLaw law;
        law.assign_merged(std::move(pairs));
        return law;
    }

    const std::vector<double>& atoms() const noexcept { return atoms_; }
    const std::vector<double>& probs() const noexcept { return probs_; }
    std::size_t size() const noexcept { return atoms_.size(); }

    double total_mass() const {
        double s = 0.0;
        for (double p : probs_) s += p;
        return s;
    }

    double mean() const {
        double m = 0.0;
        for (std::size_t i = 0; i < atoms_.size(); ++i) m += atoms_[i] * probs_[i];
        return m;
    }

    /// Left-continuous inverse CDF.
    double quantile(double t) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < atoms_.size(); ++i) {
            acc += probs_[i];
            if (t <= acc) return atoms_[i];
        }
        return atoms_.back();
    }

private:
    void assign_merged(std::vector<std::pair<double, double>> pairs) {
        std::sort(pairs.begin(), pairs.end());
        atoms_.clear();
        probs_.clear();
        for (const auto& [x, p] : pairs) {
            if (p == 0.0) continue;
            if (!atoms_.empty() && x - atoms_.back() <= kAtomMergeTolerance) {
                probs_.back() += p;
            } else {
                atoms_.push_back(x);
                probs_.push_back(p);
            }
        }
        if (atoms_.empty()) {
            throw InputError("discrete law has no positive mass");
        }
    }

    std::vector<double> atoms_;
    std::vector<double> probs_;
};

/// Exact W_p between two discrete laws, integrating |F1^-1 - F2^-1|^p over the merged CDF breakpoints.
inline double wasserstein_p(const DiscreteReturnLaw& a, const DiscreteReturnLaw& b, int p) {
    if (p < 1) throw InputError("Wasserstein order p must be >= 1");
    const auto& xa = a.atoms();
    const auto& pa = a.probs();
    const auto& xb = b.atoms();
    const auto& pb = b.probs();
    // Normalize so that rounding in the masses cannot leave a tail segment unmatched.
    const double ma = a.total_mass();
    const double mb = b.total_mass();
    std::size_t i = 0, j = 0;
    double ca = pa[0] / ma, cb = pb[0] / mb, t = 0.0, acc = 0.0;
    while (true) {
        const double next = std::min(ca, cb);
        acc += (next - t) * std::pow(std::abs(xa[i] - xb[j]), p);
        t = next;
        const bool advance_a = ca <= cb && i + 1 < xa.size();
        const bool advance_b = cb <= ca && j + 1 < xb.size();
        if (!advance_a && !advance_b) break;
        if (advance_a) ca += pa[++i] / ma;
        if (advance_b) cb += pb[++j] / mb;
    }
    // Any residual segment up to t = 1 (only from rounding) pairs the last atoms.
    if (t < 1.0) acc += (1.0 - t) * std::pow(std::abs(xa.back() - xb.back()), p);
    return std::pow(acc, 1.0 / p);
}

/// Finite MDP with explicit tables. Pairs (s, a) are flattened to s * n_actions + a.
struct TabularMdp {
    int n_states = 1;
    int n_actions = 1;
    std::vector<std::vector<std::vector<double>>> transition;  // [s][a][s']
    std::vector<std::vector<DiscreteReturnLaw>> reward;        // [s][a]
    double gamma = 0.9;
    std::vector<std::vector<double>> target_policy;            // [s][a]
    std::vector<double> initial;                               // rho over states; empty means uniform

    int pair_count() const { return n_states * n_actions; }
    int index(int s, int a) const { return s * n_actions + a; }

    std::vector<double> initial_distribution() const {
        if (initial.empty()) return std::vector<double>(n_states, 1.0 / n_states);
        return initial;
    }

    void validate() const {
        auto near_one = [](const std::vector<double>& v, double tol) {
            double s = 0.0;
            for (double x : v) {
                if (x < 0.0) return false;
                s += x;
            }
            return std::abs(s - 1.0) <= tol;
        };
        if (n_states < 1 || n_actions < 1) throw ConfigError("tabular MDP needs positive state/action counts");
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("tabular MDP discount must lie in [0, 1)");
        if (static_cast<int>(transition.size()) != n_states || static_cast<int>(reward.size()) != n_states ||
            static_cast<int>(target_policy.size()) != n_states) {
            throw ConfigError("tabular MDP tables must have one entry per state");
        }
        for (int s = 0; s < n_states; ++s) {
            if (static_cast<int>(transition[s].size()) != n_actions || static_cast<int>(reward[s].size()) != n_actions ||
                static_cast<int>(target_policy[s].size()) != n_actions) {
                throw ConfigError("tabular MDP tables must have one entry per action");
            }
            if (!near_one(target_policy[s], 1e-12)) throw ConfigError("target policy row does not sum to 1");
            for (int a = 0; a < n_actions; ++a) {
                if (static_cast<int>(transition[s][a].size()) != n_states || !near_one(transition[s][a], 1e-12)) {
                    throw ConfigError("transition row P[s][a][.] must be a probability vector");
                }
                if (std::abs(reward[s][a].total_mass() - 1.0) > 1e-12) {
                    throw ConfigError("reward law probabilities must sum to 1");
                }
            }
        }
        if (!initial.empty() && (static_cast<int>(initial.size()) != n_states || !near_one(initial, 1e-12))) {
            throw ConfigError("initial distribution must be a probability vector over states");
        }
    }
};

using ReturnFunction = std::vector<DiscreteReturnLaw>;

/// One exact application of the distributional Bellman operator: law of R + gamma * Z(S', A').
inline ReturnFunction apply_bellman(const TabularMdp& mdp, const ReturnFunction& eta,
                                    std::size_t atom_cap = kDefaultAtomCap) {
    if (static_cast<int>(eta.size()) != mdp.pair_count()) {
        throw InputError("return function must define a law for every (s, a)");
    }
    ReturnFunction out;
    out.reserve(eta.size());
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            const auto& rlaw = mdp.reward[s][a];
            std::size_t continuation_atoms = 0;
            for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                if (mdp.transition[s][a][s2] == 0.0) continue;
                for (int a2 = 0; a2 < mdp.n_actions; ++a2) {
                    if (mdp.target_policy[s2][a2] > 0.0) continuation_atoms += eta[mdp.index(s2, a2)].size();
                }
            }
            const std::size_t count = rlaw.size() * continuation_atoms;
            if (count > atom_cap) {
                throw ResourceError("Bellman update would enumerate " + std::to_string(count) +
                                    " atoms, above the cap of " + std::to_string(atom_cap));
            }
            std::vector<std::pair<double, double>> pairs;
            pairs.reserve(count);
            for (std::size_t k = 0; k < rlaw.size(); ++k) {
                const double r = rlaw.atoms()[k];
                const double pr = rlaw.probs()[k];
                for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                    const double ps = mdp.transition[s][a][s2];
                    if (ps == 0.0) continue;
                    for (int a2 = 0; a2 < mdp.n_actions; ++a2) {
                        const double pa = mdp.target_policy[s2][a2];
                        if (pa == 0.0) continue;
                        const auto& z = eta[mdp.index(s2, a2)];
                        const double w = pr * ps * pa;
                        for (std::size_t m = 0; m < z.size(); ++m) {
                            pairs.emplace_back(r + mdp.gamma * z.atoms()[m], w * z.probs()[m]);
                        }
                    }
                }
            }
            out.push_back(DiscreteReturnLaw::from_pairs(std::move(pairs)));
        }
    }
    return out;
}

inline double max_w1_gap(const ReturnFunction& a, const ReturnFunction& b) {
    double gap = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) gap = std::max(gap, wasserstein_p(a[i], b[i], 1));
    return gap;
}

struct FixedPointResult {
    ReturnFunction laws;
    int iterations = 0;          // index t of the first iterate with sup-W1(T eta_t, eta_t) < tol
    bool converged = false;
    std::vector<double> gaps;    // sup-W1 between successive iterates, in order
};

/// Iterates from Dirac(0) until the sup-W1 gap between successive iterates drops below `tol`.
inline FixedPointResult fixed_point(const TabularMdp& mdp, double tol, int max_iter,
                                    std::size_t atom_cap = kDefaultAtomCap) {
    if (!(tol > 0.0)) throw InputError("fixed_point tolerance must be positive");
    FixedPointResult result;
    ReturnFunction current(mdp.pair_count(), DiscreteReturnLaw::dirac(0.0));
    for (int t = 0; t < max_iter; ++t) {
        ReturnFunction next = apply_bellman(mdp, current, atom_cap);
        const double gap = max_w1_gap(next, current);
        result.gaps.push_back(gap);
        current = std::move(next);
        if (gap < tol) {
            result.converged = true;
            result.iterations = t;
            result.laws = std::move(current);
            return result;
        }
    }
    result.iterations = max_iter;
    result.laws = std::move(current);
    return result;
}

/// ( sum_{s,a} nu(s,a) * W_p(eta1(s,a), eta2(s,a))^{2p} )^{1/(2p)}.
inline double wbar_p(const std::vector<double>& nu, const ReturnFunction& eta1, const ReturnFunction& eta2, int p) {
    if (nu.size() != eta1.size() || nu.size() != eta2.size()) {
        throw InputError("weighting distribution and return functions differ in size");
    }
    double mass = 0.0;
    for (double w : nu) mass += w;
    if (std::abs(mass - 1.0) > 1e-9) throw InputError("weighting distribution must sum to 1");
    double acc = 0.0;
    for (std::size_t i = 0; i < nu.size(); ++i) {
        if (nu[i] == 0.0) continue;
        acc += nu[i] * std::pow(wasserstein_p(eta1[i], eta2[i], p), 2.0 * p);
    }
    return std::pow(acc, 1.0 / (2.0 * p));
}

/// Discounted occupancy (1 - gamma) * sum_t gamma^t P[S_t = s, A_t = a] under `policy`, truncated
/// at ceil(log(1e-12) / log(gamma)) terms and renormalized.
inline std::vector<double> discounted_occupancy(const TabularMdp& mdp, const std::vector<std::vector<double>>& policy,
                                                const std::vector<double>& initial) {
    const int horizon = mdp.gamma > 0.0 ? static_cast<int>(std::ceil(std::log(1e-12) / std::log(mdp.gamma))) : 0;
    std::vector<double> occupancy(mdp.pair_count(), 0.0);
    std::vector<double> state_dist = initial;
    double discount = 1.0;
    for (int t = 0; t <= horizon; ++t) {
        std::vector<double> next(mdp.n_states, 0.0);
        for (int s = 0; s < mdp.n_states; ++s) {
            if (state_dist[s] == 0.0) continue;
            for (int a = 0; a < mdp.n_actions; ++a) {
                const double w = state_dist[s] * policy[s][a];
                occupancy[mdp.index(s, a)] += discount * w;
                for (int s2 = 0; s2 < mdp.n_states; ++s2) next[s2] += w * mdp.transition[s][a][s2];
            }
        }
        state_dist = std::move(next);
        discount *= mdp.gamma;
    }
    double total = 0.0;
    for (double x : occupancy) total += x;
    for (double& x : occupancy) x /= total;
    return occupancy;
}

inline std::vector<double> discounted_occupancy(const TabularMdp& mdp) {
    return discounted_occupancy(mdp, mdp.target_policy, mdp.initial_distribution());
}

/// Exact Q^pi for `policy` from the linear Bellman equation (I - gamma * M) Q = E[R].
inline std::vector<double> exact_q_values(const TabularMdp& mdp, const std::vector<std::vector<double>>& policy) {
    const int n = mdp.pair_count();
    Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs(n);
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            const int i = mdp.index(s, a);
            rhs(i) = mdp.reward[s][a].mean();
            for (int s2 = 0; s2 < mdp.n_states; ++s2) {
                for (int a2 = 0; a2 < mdp.n_actions; ++a2) {
                    system(i, mdp.index(s2, a2)) -= mdp.gamma * mdp.transition[s][a][s2] * policy[s2][a2];
                }
            }
        }
    }
    const Eigen::VectorXd q = system.partialPivLu().solve(rhs);
    return {q.data(), q.data() + n};
}

/// V^pi = E_{S ~ rho, A ~ pi}[Q^pi(S, A)].
inline double exact_policy_value(const TabularMdp& mdp, const std::vector<std::vector<double>>& policy) {
    const auto q = exact_q_values(mdp, policy);
    const auto rho = mdp.initial_distribution();
    double v = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) v += rho[s] * policy[s][a] * q[mdp.index(s, a)];
    }
    return v;
}

namespace detail {

inline std::vector<double> random_simplex(int n, Rng& rng) {
    std::vector<double> w(n);
    double total = 0.0;
    for (double& x : w) {
        x = -std::log(uniform_open(rng));
        total += x;
    }
    for (double& x : w) x /= total;
    return w;
}

}  // namespace detail

/// Random law with 1..max_atoms atoms drawn uniformly on [lo, hi].
inline DiscreteReturnLaw random_discrete_law(int max_atoms, double lo, double hi, Rng& rng) {
    const int n = 1 + static_cast<int>(uniform_open(rng) * max_atoms);
    std::vector<double> atoms(n);
    for (double& x : atoms) x = lo + (hi - lo) * uniform_open(rng);
    return DiscreteReturnLaw(std::move(atoms), detail::random_simplex(n, rng));
}

/// Random dense MDP with Dirichlet-like rows and small finite reward laws.
inline TabularMdp random_tabular_mdp(int n_states, int n_actions, double gamma, Rng& rng) {
    TabularMdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.transition.assign(n_states, std::vector<std::vector<double>>(n_actions));
    mdp.reward.assign(n_states, std::vector<DiscreteReturnLaw>(n_actions));
    mdp.target_policy.resize(n_states);
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            mdp.transition[s][a] = detail::random_simplex(n_states, rng);
            mdp.reward[s][a] = random_discrete_law(2, -1.0, 1.0, rng);
        }
        mdp.target_policy[s] = detail::random_simplex(n_actions, rng);
    }
    mdp.initial = detail::random_simplex(n_states, rng);
    return mdp;
}

struct ContractionSummary {
    double gamma = 0.0;
    int p = 1;
    int trials = 0;
    int skipped = 0;           // eta == eta' pairs, ratio undefined
    int violations = 0;
    double max_ratio = 0.0;
    double bound = 0.0;        // gamma^{1 - 1/(2p)}
};

/// Random-trial check of Wbar_{p,d^pi}(T eta, T eta') <= gamma^{1-1/(2p)} Wbar_{p,d^pi}(eta, eta') + 1e-9.
inline ContractionSummary contraction_trials(double gamma, int p, int trials, Rng& rng) {
    ContractionSummary summary{gamma, p, trials, 0, 0, 0.0, std::pow(gamma, 1.0 - 1.0 / (2.0 * p))};
    for (int trial = 0; trial < trials; ++trial) {
        const int ns = 1 + static_cast<int>(uniform_open(rng) * 4);
        const int na = 1 + static_cast<int>(uniform_open(rng) * 3);
        const TabularMdp mdp = random_tabular_mdp(ns, na, gamma, rng);
        ReturnFunction eta, eta2;
        // Occasionally reuse eta to exercise the degenerate (skipped) path.
        const bool identical = uniform_open(rng) < 0.02;
        for (int i = 0; i < mdp.pair_count(); ++i) {
            eta.push_back(random_discrete_law(3, -3.0, 3.0, rng));
            eta2.push_back(identical ? eta.back() : random_discrete_law(3, -3.0, 3.0, rng));
        }
        const auto nu = discounted_occupancy(mdp);
        const double before = wbar_p(nu, eta, eta2, p);
        if (before == 0.0) {
            ++summary.skipped;
            continue;
        }
        const double after = wbar_p(nu, apply_bellman(mdp, eta), apply_bellman(mdp, eta2), p);
        summary.max_ratio = std::max(summary.max_ratio, after / before);
        if (after > summary.bound * before + 1e-9) ++summary.violations;
    }
    return summary;
}

}  // namespace dqpope
