#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "envs.hpp"
#include "errors.hpp"
#include "neural.hpp"
#include "random.hpp"
#include "types.hpp"

namespace dqpope {

/// Check loss rho_tau(u) = u * (tau - 1{u <= 0}).
inline double pinball(double u, double tau) { return u * (tau - (u <= 0.0 ? 1.0 : 0.0)); }

/// d rho_tau / du; the kink u = 0 takes tau - 1.
inline double pinball_grad(double u, double tau) { return tau - (u <= 0.0 ? 1.0 : 0.0); }

/// W_1 between two empirical laws. Equal sizes use the sorted-pair formula; otherwise the two
/// quantile step functions are merged exactly on the common grid of breakpoints i/n and j/m.
inline double w1_empirical(const ReturnDistribution& a, const ReturnDistribution& b) {
    const auto xa = a.samples();
    const auto xb = b.samples();
    const auto n = static_cast<std::int64_t>(xa.size());
    const auto m = static_cast<std::int64_t>(xb.size());
    if (n == m) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) acc += std::abs(xa[i] - xb[i]);
        return acc / static_cast<double>(n);
    }
    // Positions measured in units of 1 / (n * m) so every breakpoint is an integer.
    std::int64_t i = 0, j = 0, pos = 0;
    double acc = 0.0;
    while (i < n && j < m) {
        const std::int64_t end_a = (i + 1) * m;
        const std::int64_t end_b = (j + 1) * n;
        const std::int64_t next = std::min(end_a, end_b);
        acc += static_cast<double>(next - pos) * std::abs(xa[i] - xb[j]);
        pos = next;
        if (end_a == next) ++i;
        if (end_b == next) ++j;
    }
    return acc / (static_cast<double>(n) * static_cast<double>(m));
}

/// Two-sample Kolmogorov-Smirnov statistic sup_x |F_a(x) - F_b(x)|.
inline double ks_statistic(std::span<const double> a_in, std::span<const double> b_in) {
    if (a_in.empty() || b_in.empty()) throw InputError("KS statistic needs non-empty samples");
    std::vector<double> a(a_in.begin(), a_in.end()), b(b_in.begin(), b_in.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

/// tau_k = (2k - 1) / (2K), k = 1..K.
inline std::vector<double> midpoint_levels(int k) {
    if (k < 1) throw InputError("need at least one quantile level");
    std::vector<double> out(k);
    for (int i = 0; i < k; ++i) out[i] = (2.0 * i + 1.0) / (2.0 * k);
    return out;
}

inline std::vector<double> uniform_levels(int k, Rng& rng) {
    if (k < 1) throw InputError("need at least one quantile level");
    std::vector<double> out(k);
    for (double& t : out) t = uniform_open(rng);
    return out;
}

/// Batched network input for the pairs (initial_draws[k], levels[k]).
inline NetInput make_input(const std::vector<std::pair<State, int>>& draws, const std::vector<double>& levels) {
    NetInput in;
    const long k = static_cast<long>(draws.size());
    const long d = static_cast<long>(draws.front().first.size());
    in.states.resize(d, k);
    in.actions.resize(k);
    in.taus.resize(k);
    for (long i = 0; i < k; ++i) {
        in.states.col(i) = Eigen::Map<const Eigen::VectorXd>(draws[i].first.data(), d);
        in.actions[i] = draws[i].second;
        in.taus(i) = levels.empty() ? 0.5 : levels[i];
    }
    return in;
}

/// V_K = (1/K) sum_k f(s_{0,k}, a_{0,k}, tau_k).
inline double value_from_quantiles(const QuantileNet& net, const std::vector<std::pair<State, int>>& initial_draws,
                                   const std::vector<double>& levels) {
    if (initial_draws.empty() || levels.size() != initial_draws.size()) {
        throw InputError("value_from_quantiles needs K >= 1 initial draws and K levels");
    }
    return net.forward(make_input(initial_draws, levels)).row(0).mean();
}

/// (1/R) sum_r (estimate_r - truth)^2.
inline double mse_over_replicates(std::span<const double> estimates, double truth) {
    if (estimates.empty()) throw InputError("MSE needs at least one estimate");
    double acc = 0.0;
    for (double e : estimates) acc += (e - truth) * (e - truth);
    return acc / static_cast<double>(estimates.size());
}

/// Inverse-CDF generator: sorted {f(state, action, u_i)} with u_i ~ Unif(0, 1).
inline ReturnDistribution sample_from_net(const QuantileNet& net, std::span<const double> state, int action, long n,
                                          Rng& rng) {
    if (n < 1) throw InputError("need at least one sample");
    std::vector<std::pair<State, int>> draws(static_cast<std::size_t>(n), {State(state.begin(), state.end()), action});
    const auto levels = uniform_levels(static_cast<int>(n), rng);
    const Eigen::RowVectorXd out = net.forward(make_input(draws, levels)).row(0);
    return ReturnDistribution(std::vector<double>(out.data(), out.data() + out.size()));
}

/// Draws from the estimated mixture law: one fresh level per initial (s0, a0) draw.
inline ReturnDistribution sample_mixture_from_net(const QuantileNet& net,
                                                  const std::vector<std::pair<State, int>>& initial_draws, Rng& rng) {
    if (initial_draws.empty()) throw InputError("need at least one initial draw");
    const auto levels = uniform_levels(static_cast<int>(initial_draws.size()), rng);
    const Eigen::RowVectorXd out = net.forward(make_input(initial_draws, levels)).row(0);
    return ReturnDistribution(std::vector<double>(out.data(), out.data() + out.size()));
}

}  // namespace dqpope
