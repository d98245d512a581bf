#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dqpope/losses.hpp"

namespace dqpope {
namespace {

// f(s, a, tau) = tau: input row for tau passes through both ReLU layers unchanged.
QuantileNet identity_tau_net() {
    NetArchitecture a;
    a.state_dim = 1;
    a.action_count = 1;
    a.hidden = {12, 12};
    a.embedding = TauEmbedding::kConcatScalar;
    QuantileNet net(a);
    net.weight(0)(0, 2) = 1.0;  // input layout: state, one-hot action, tau
    net.weight(1)(0, 0) = 1.0;
    net.weight(2)(0, 0) = 1.0;
    return net;
}

QuantileNet constant_net(double c) {
    NetArchitecture a;
    a.state_dim = 1;
    a.action_count = 1;
    a.hidden = {4};
    a.embedding = TauEmbedding::kConcatScalar;
    QuantileNet net(a);
    net.bias(1)(0) = c;
    return net;
}

std::vector<std::pair<State, int>> toy_draws(int k) { return std::vector<std::pair<State, int>>(k, {State{0.0}, 0}); }

TEST(Pinball, Values) {
    EXPECT_DOUBLE_EQ(pinball(0.0, 0.3), 0.0);
    EXPECT_DOUBLE_EQ(pinball(2.0, 0.5), 1.0);
    EXPECT_NEAR(pinball(-1.0, 0.9), 0.1, 1e-15);
    EXPECT_DOUBLE_EQ(pinball(1.0, 0.9), 0.9);
}

TEST(Pinball, Gradient) {
    EXPECT_DOUBLE_EQ(pinball_grad(5.0, 0.3), 0.3);
    EXPECT_DOUBLE_EQ(pinball_grad(-5.0, 0.3), -0.7);
    EXPECT_DOUBLE_EQ(pinball_grad(0.0, 0.3), 0.3 - 1.0);
    const double h = 1e-6;
    for (double u : {-1.0, 1.0}) {
        for (double tau : {0.1, 0.5, 0.9}) {
            const double fd = (pinball(u + h, tau) - pinball(u - h, tau)) / (2 * h);
            EXPECT_NEAR(fd, pinball_grad(u, tau), 1e-9);
        }
    }
}

TEST(Pinball, ConvexInU) {
    Rng rng = make_rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double a = 4 * standard_normal(rng), b = 4 * standard_normal(rng), t = uniform_open(rng);
        const double lam = uniform_open(rng);
        EXPECT_LE(pinball(lam * a + (1 - lam) * b, t), lam * pinball(a, t) + (1 - lam) * pinball(b, t) + 1e-12);
    }
}

TEST(Pinball, PopulationMinimizerIsQuantile) {
    Rng rng = make_rng(2);
    std::vector<double> y(20000);
    for (double& v : y) v = standard_normal(rng);
    const ReturnDistribution d(y);
    for (double tau : {0.1, 0.5, 0.8}) {
        double best = 0.0, best_loss = 1e300;
        for (double c = -3.0; c <= 3.0; c += 0.01) {
            double loss = 0.0;
            for (double v : y) loss += pinball(v - c, tau);
            if (loss < best_loss) {
                best_loss = loss;
                best = c;
            }
        }
        EXPECT_NEAR(best, d.quantile(tau), 0.02);
    }
}

TEST(W1, Basics) {
    const ReturnDistribution a({1.0, 2.0, 3.0});
    EXPECT_DOUBLE_EQ(w1_empirical(a, a), 0.0);
    EXPECT_DOUBLE_EQ(w1_empirical(ReturnDistribution({3.0}), ReturnDistribution({5.0})), 2.0);
    EXPECT_DOUBLE_EQ(w1_empirical(a, ReturnDistribution({2.0, 3.0, 4.0})), 1.0);
}

TEST(W1, UnequalSizesMatchQuadrature) {
    const ReturnDistribution a({0.0, 1.0});
    const ReturnDistribution b({0.0, 0.5, 1.0});
    const int n = 1'000'000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = (i + 0.5) / n;
        const double qa = a.samples()[std::min<std::size_t>(static_cast<std::size_t>(t * 2), 1)];
        const double qb = b.samples()[std::min<std::size_t>(static_cast<std::size_t>(t * 3), 2)];
        acc += std::abs(qa - qb);
    }
    EXPECT_NEAR(w1_empirical(a, b), acc / n, 1e-6);
    EXPECT_NEAR(w1_empirical(a, b), 1.0 / 6.0, 1e-15);
}

TEST(W1, MetricProperties) {
    Rng rng = make_rng(3);
    auto draw = [&](int n, double shift) {
        std::vector<double> x(n);
        for (double& v : x) v = shift + standard_normal(rng);
        return ReturnDistribution(x);
    };
    for (int i = 0; i < 20; ++i) {
        const auto a = draw(7, 0.0), b = draw(11, 0.3), c = draw(5, -0.2);
        EXPECT_GE(w1_empirical(a, b), 0.0);
        EXPECT_NEAR(w1_empirical(a, b), w1_empirical(b, a), 1e-12);
        EXPECT_LE(w1_empirical(a, c), w1_empirical(a, b) + w1_empirical(b, c) + 1e-12);
        EXPECT_GE(w1_empirical(a, b) + 1e-12, std::abs(a.mean() - b.mean()));
    }
}

TEST(Ks, IdenticalAndDisjoint) {
    const std::vector<double> a{1, 2, 3}, b{4, 5};
    EXPECT_DOUBLE_EQ(ks_statistic(a, a), 0.0);
    EXPECT_DOUBLE_EQ(ks_statistic(a, b), 1.0);
}

TEST(Levels, Midpoints) {
    const auto l = midpoint_levels(4);
    EXPECT_EQ(l, (std::vector<double>{0.125, 0.375, 0.625, 0.875}));
    EXPECT_THROW(midpoint_levels(0), InputError);
}

TEST(ValueFromQuantiles, ConstantNet) {
    const auto net = constant_net(1.25);
    Rng rng = make_rng(4);
    for (int k : {1, 4, 32}) EXPECT_DOUBLE_EQ(value_from_quantiles(net, toy_draws(k), uniform_levels(k, rng)), 1.25);
}

TEST(ValueFromQuantiles, IdentityTauNet) {
    const auto net = identity_tau_net();
    EXPECT_DOUBLE_EQ(net.forward(State{0.0}, 0, 0.3), 0.3);
    Rng rng = make_rng(5);
    const int k = 100000;
    EXPECT_NEAR(value_from_quantiles(net, toy_draws(k), uniform_levels(k, rng)), 0.5, 0.005);
    for (int kk : {1, 2, 7, 32}) EXPECT_NEAR(value_from_quantiles(net, toy_draws(kk), midpoint_levels(kk)), 0.5, 1e-15);
    EXPECT_THROW(value_from_quantiles(net, {}, {}), InputError);
    EXPECT_THROW(value_from_quantiles(net, toy_draws(2), {0.5}), InputError);
}

TEST(Mse, Cases) {
    EXPECT_DOUBLE_EQ(mse_over_replicates(std::vector<double>{2.0, 2.0}, 2.0), 0.0);
    EXPECT_DOUBLE_EQ(mse_over_replicates(std::vector<double>{3.0, 1.0}, 2.0), 1.0);
    EXPECT_THROW(mse_over_replicates(std::vector<double>{}, 0.0), InputError);
    Rng rng = make_rng(6);
    std::vector<double> e(100000);
    for (double& v : e) v = 1.0 + 0.5 * standard_normal(rng);
    EXPECT_NEAR(mse_over_replicates(e, 1.0), 0.25, 0.03 * 0.25);
}

TEST(SampleFromNet, InverseCdfOfIdentityIsUniform) {
    const auto net = identity_tau_net();
    Rng rng = make_rng(7);
    const auto d = sample_from_net(net, State{0.0}, 0, 5000, rng);
    ASSERT_EQ(d.size(), 5000u);
    std::vector<double> u(5000);
    for (double& v : u) v = uniform_open(rng);
    EXPECT_LT(ks_statistic(d.samples(), u), 0.03);
    for (std::size_t i = 1; i < d.size(); ++i) EXPECT_LE(d.samples()[i - 1], d.samples()[i]);
}

TEST(ReturnDistribution, PermutationInvariant) {
    Rng rng = make_rng(30);
    std::vector<double> xs(200);
    for (double& x : xs) x = standard_normal(rng);
    auto shuffled = xs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const ReturnDistribution a(xs), b(shuffled);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.quantile(0.37), b.quantile(0.37));
    EXPECT_THROW(ReturnDistribution(std::vector<double>{}), InputError);
}

}  // namespace
}  // namespace dqpope
