#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace dqpope {

using State = std::vector<double>;

/// One offline sample (s, a, r, s', terminal).
struct Transition {
    State state;
    int action = 0;
    double reward = 0.0;
    State next_state;
    bool terminal = false;
};

using Dataset = std::vector<Transition>;

/// Empirical return law, stored as sorted samples.
class ReturnDistribution {
public:
    explicit ReturnDistribution(std::vector<double> samples) : samples_(std::move(samples)) {
        if (samples_.empty()) {
            throw InputError("ReturnDistribution requires at least one sample");
        }
        std::sort(samples_.begin(), samples_.end());
    }

    std::span<const double> samples() const noexcept { return samples_; }
    std::size_t size() const noexcept { return samples_.size(); }

    double mean() const {
        return std::accumulate(samples_.begin(), samples_.end(), 0.0) / static_cast<double>(samples_.size());
    }

    /// Linearly interpolated empirical quantile; position (n - 1) * tau.
    double quantile(double tau) const {
        if (!(tau >= 0.0 && tau <= 1.0)) {
            throw InputError("quantile level must lie in [0, 1]");
        }
        const double pos = tau * static_cast<double>(samples_.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, samples_.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return samples_[lo] + frac * (samples_[hi] - samples_[lo]);
    }

    friend bool operator==(const ReturnDistribution&, const ReturnDistribution&) = default;

private:
    std::vector<double> samples_;
};

}  // namespace dqpope
