#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dqpope/envs.hpp"
#include "dqpope/estimators.hpp"
#include "dqpope/neural.hpp"

namespace dqpope {
namespace {

NetArchitecture arch(std::vector<int> hidden, TauEmbedding mode, int state_dim = 3, int actions = 2) {
    NetArchitecture a;
    a.state_dim = state_dim;
    a.action_count = actions;
    a.hidden = std::move(hidden);
    a.embedding = mode;
    a.cosine_order = 8;
    return a;
}

NetInput random_input(const NetArchitecture& a, long batch, Rng& rng) {
    NetInput in;
    in.states.resize(a.state_dim, batch);
    for (long j = 0; j < batch; ++j) {
        for (int i = 0; i < a.state_dim; ++i) in.states(i, j) = standard_normal(rng);
    }
    in.taus.resize(batch);
    for (long j = 0; j < batch; ++j) {
        in.actions.push_back(static_cast<int>(uniform_open(rng) * a.action_count));
        in.taus(j) = uniform_open(rng);
    }
    return in;
}

double weighted_output(const QuantileNet& net, const NetInput& in, const Eigen::MatrixXd& upstream) {
    return net.forward(in).cwiseProduct(upstream).sum();
}

// Central finite differences on 50 random parameters against backward().
void check_gradients(const NetArchitecture& a, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    QuantileNet net(a);
    for (long i = 0; i < net.parameter_count(); ++i) net.params()(i) = -0.5 + uniform_open(rng);
    const NetInput in = random_input(a, 4, rng);
    Eigen::MatrixXd upstream(a.output_dim, 4);
    for (long i = 0; i < upstream.size(); ++i) upstream(i) = standard_normal(rng);
    const Eigen::VectorXd grad = net.backward(net.forward_cached(in), upstream);

    const double h = 1e-5;
    for (int trial = 0; trial < 50; ++trial) {
        const long p = static_cast<long>(uniform_open(rng) * net.parameter_count());
        QuantileNet plus = net, minus = net;
        plus.params()(p) += h;
        minus.params()(p) -= h;
        const double fd = (weighted_output(plus, in, upstream) - weighted_output(minus, in, upstream)) / (2 * h);
        const double scale = std::max({std::abs(fd), std::abs(grad(p)), 1e-7});
        EXPECT_LT(std::abs(fd - grad(p)) / scale, 1e-4) << "parameter " << p << " analytic " << grad(p) << " fd " << fd;
    }
}

TEST(QuantileNet, ZeroNetworkOutputsZero) {
    QuantileNet net(arch({12, 12}, TauEmbedding::kConcatScalar));
    const std::vector<double> s{0.3, -1.0, 2.0};
    EXPECT_EQ(net.forward(s, 1, 0.25), 0.0);
    EXPECT_EQ(net.forward(s, 0, 0.9), 0.0);
}

TEST(QuantileNet, CosineEmbeddingAtMedianIsReluOfBias) {
    auto a = arch({4}, TauEmbedding::kCosine);
    a.cosine_order = 1;
    Rng rng = make_rng(3);
    QuantileNet net(a, rng);
    net.cosine_bias() << 0.7, -0.2, 0.0, 1.5;
    const auto cache = net.forward_cached(net.single(std::vector<double>{1.0, 2.0, 3.0}, 0, 0.5));
    EXPECT_NEAR(cache.cosines(0, 0), 0.0, 1e-15);
    Eigen::Vector4d expected(0.7, 0.0, 0.0, 1.5);
    EXPECT_LT((cache.embed.col(0) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QuantileNet, OutputClipBoundsEveryOutput) {
    auto a = arch({12, 12}, TauEmbedding::kConcatScalar);
    a.output_clip = 1.0;
    Rng rng = make_rng(5);
    QuantileNet net(a, rng);
    net.bias(net.layer_count() - 1)(0) = 3.0;
    const NetInput in = random_input(a, 1000, rng);
    const Eigen::MatrixXd out = net.forward(in);
    EXPECT_LE(out.maxCoeff(), 1.0);
    EXPECT_GE(out.minCoeff(), -1.0);
}

TEST(QuantileNet, RejectsLevelsOutsideOpenInterval) {
    QuantileNet net(arch({4}, TauEmbedding::kConcatScalar));
    const std::vector<double> s{0.0, 0.0, 0.0};
    EXPECT_THROW(net.forward(s, 0, 0.0), InputError);
    EXPECT_THROW(net.forward(s, 0, 1.0), InputError);
}

TEST(Backward, MatchesFiniteDifferencesAcrossArchitectures) {
    std::uint64_t seed = 100;
    for (auto mode : {TauEmbedding::kConcatScalar, TauEmbedding::kCosine}) {
        for (std::vector<int> hidden : {std::vector<int>{12, 12}, std::vector<int>{64, 64, 64}, std::vector<int>{12},
                                        std::vector<int>{12, 12, 12}}) {
            SCOPED_TRACE(to_string(mode) + " depth " + std::to_string(hidden.size()));
            check_gradients(arch(hidden, mode), ++seed);
        }
    }
}

TEST(Backward, MatchesFiniteDifferencesWithClipAndMultipleHeads) {
    auto a = arch({12, 12}, TauEmbedding::kNone);
    a.output_dim = 5;
    check_gradients(a, 7);
    auto clipped = arch({12, 12}, TauEmbedding::kConcatScalar);
    clipped.output_clip = 0.3;
    check_gradients(clipped, 8);
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
    const auto a = arch({12, 12}, TauEmbedding::kCosine);
    Rng rng = make_rng(11);
    QuantileNet net(a, rng);
    const NetInput in = random_input(a, 6, rng);
    const Eigen::VectorXd g = net.backward(net.forward_cached(in), Eigen::MatrixXd::Zero(1, 6));
    EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, DuplicatedItemDoublesGradient) {
    const auto a = arch({12, 12}, TauEmbedding::kConcatScalar);
    Rng rng = make_rng(12);
    QuantileNet net(a, rng);
    NetInput one = random_input(a, 1, rng);
    NetInput two;
    two.states.resize(a.state_dim, 2);
    two.states << one.states, one.states;
    two.actions = {one.actions[0], one.actions[0]};
    two.taus = Eigen::Vector2d(one.taus(0), one.taus(0));
    const Eigen::VectorXd g1 = net.backward(net.forward_cached(one), Eigen::MatrixXd::Constant(1, 1, 0.7));
    const Eigen::VectorXd g2 = net.backward(net.forward_cached(two), Eigen::MatrixXd::Constant(1, 2, 0.7));
    EXPECT_LT((g2 - 2.0 * g1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QuantileNet, FinalLayerScalingScalesOutput) {
    const auto a = arch({12, 12}, TauEmbedding::kConcatScalar);
    Rng rng = make_rng(13);
    QuantileNet net(a, rng);
    for (long i = 0; i < net.parameter_count(); ++i) net.params()(i) = -0.5 + uniform_open(rng);
    QuantileNet scaled = net;
    const double alpha = 2.5;
    scaled.weight(scaled.layer_count() - 1) *= alpha;
    scaled.bias(scaled.layer_count() - 1) *= alpha;
    const NetInput in = random_input(a, 20, rng);
    EXPECT_LT((scaled.forward(in) - alpha * net.forward(in)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QuantileNet, JsonRoundTripPreservesOutputs) {
    auto a = arch({6, 5}, TauEmbedding::kCosine);
    a.output_clip = 4.0;
    Rng rng = make_rng(14);
    QuantileNet net(a, rng);
    const QuantileNet back = QuantileNet::from_json(nlohmann::json::parse(net.to_json().dump()));
    EXPECT_TRUE(back.architecture() == net.architecture());
    EXPECT_EQ(back.params(), net.params());
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
    const Eigen::VectorXd w0 = w;
    AdamState opt(5, 0.1);
    for (int i = 0; i < 10; ++i) adam_step(w, Eigen::VectorXd::Zero(5), opt);
    EXPECT_EQ(w, w0);
    EXPECT_EQ(opt.step, 10);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
    for (double g : {3.0, -0.02}) {
        Eigen::VectorXd w = Eigen::VectorXd::Constant(1, 1.0);
        AdamState opt(1, 0.01);
        adam_step(w, Eigen::VectorXd::Constant(1, g), opt);
        EXPECT_NEAR(w(0) - 1.0, -0.01 * (g > 0 ? 1.0 : -1.0), 1e-6);
    }
}

TEST(Adam, MinimizesQuadratic) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(1);
    AdamState opt(1, 0.1);
    for (int i = 0; i < 2000; ++i) adam_step(w, Eigen::VectorXd::Constant(1, 2.0 * (w(0) - 3.0)), opt);
    EXPECT_LT(std::abs(w(0) - 3.0), 0.01);
}

TEST(Adam, ShapeMismatchIsInternalError) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(2);
    AdamState opt(2, 0.1);
    EXPECT_THROW(adam_step(w, Eigen::VectorXd::Zero(3), opt), InternalError);
}

TEST(SoftUpdate, EndpointsAndComposition) {
    const auto a = arch({4}, TauEmbedding::kConcatScalar);
    Rng rng = make_rng(15);
    const QuantileNet online(a, rng);
    const QuantileNet t0(a, rng);

    QuantileNet t = t0;
    soft_update(t, online, 1.0);
    EXPECT_EQ(t.params(), online.params());

    t = t0;
    soft_update(t, online, 0.0);
    EXPECT_EQ(t.params(), t0.params());

    t = t0;
    soft_update(t, online, 0.5);
    soft_update(t, online, 0.5);
    EXPECT_LT((t.params() - (0.25 * t0.params() + 0.75 * online.params())).cwiseAbs().maxCoeff(), 1e-15);

    QuantileNet other(arch({5}, TauEmbedding::kConcatScalar));
    EXPECT_THROW(soft_update(other, online, 0.5), InternalError);
}

TEST(Training, IdenticalSeedsGiveIdenticalParameters) {
    const auto env = make_toy_env(RewardNoise::normal(1.0));
    Rng data_rng = make_rng(21);
    const Dataset data = collect_dataset(*env, PolicySpec::fixed_action(0), 3200, data_rng);
    TrainConfig cfg;
    cfg.target_update = TargetUpdate::hard_every(10);
    Rng a = make_rng(22), b = make_rng(22);
    const QuantileNet n1 = dqpope_train(data, PolicySpec::fixed_action(0), 1, cfg, a);
    const QuantileNet n2 = dqpope_train(data, PolicySpec::fixed_action(0), 1, cfg, b);
    EXPECT_EQ(n1.params(), n2.params());
}

}  // namespace
}  // namespace dqpope
