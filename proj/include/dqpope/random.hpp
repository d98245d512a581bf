#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include "errors.hpp"

namespace dqpope {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive decorrelated seeds from small integers.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Generator for stream `stream` of replicate seed `seed`. Streams never share state,
/// so results do not depend on the order in which replicates or streams are consumed.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x51ED270B27ULL)));
}

/// Uniform draw on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
    // 53 random bits mapped to cell midpoints, so 0 and 1 are unreachable.
    const auto bits = rng() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

inline double standard_normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

/// Student-t(df) as Z / sqrt(chi2(df) / df). An infinite df yields a standard normal.
inline double sample_student_t(double df, Rng& rng) {
    if (!(df > 0.0)) {
        throw ConfigError("student-t degrees of freedom must be positive");
    }
    const double z = standard_normal(rng);
    if (std::isinf(df)) {
        return z;
    }
    std::gamma_distribution<double> gamma(0.5 * df, 2.0);
    const double chi2 = gamma(rng);
    return z / std::sqrt(chi2 / df);
}

/// Number of failures before the first success with success probability p (support {0, 1, ...}).
inline long sample_geometric(double p, Rng& rng) {
    std::geometric_distribution<long> dist(p);
    return dist(rng);
}

/// Index drawn from a discrete probability vector.
template <typename Probs>
int sample_index(const Probs& probs, Rng& rng) {
    const double u = uniform_open(rng);
    double acc = 0.0;
    int last_positive = 0;
    for (int i = 0; i < static_cast<int>(probs.size()); ++i) {
        if (probs[i] <= 0.0) continue;
        acc += probs[i];
        last_positive = i;
        if (u < acc) return i;
    }
    return last_positive;
}

}  // namespace dqpope
