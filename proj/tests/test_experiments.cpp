#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "dqpope/experiments.hpp"

namespace dqpope {
namespace {

namespace fs = std::filesystem;

Json toy_config() {
    return Json::parse(R"({
      "experiment": "toy-mse-table",
      "env": {"kind": "toy-two-state"},
      "noise_settings": [{"distribution": "student-t", "degrees_of_freedom": 3},
                         {"distribution": "normal", "sigma": 1.0}],
      "estimators": [{"name": "dqpope"}, {"name": "dope"}],
      "K_values": [2, 4],
      "dataset_size": 320,
      "replicates": 3,
      "base_seed": 11
    })");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TEST(Config, RejectsUnknownKeysAtEveryLevel) {
    auto top = toy_config();
    top["replicate"] = 3;
    EXPECT_THROW(ExperimentConfig::from_json(top), ConfigError);
    auto env = toy_config();
    env["env"]["gama"] = 0.9;
    EXPECT_THROW(ExperimentConfig::from_json(env), ConfigError);
    auto est = toy_config();
    est["estimators"][0]["learning_rte"] = 0.1;
    EXPECT_THROW(ExperimentConfig::from_json(est), ConfigError);
    auto noise = toy_config();
    noise["noise_settings"][0]["df"] = 3;
    EXPECT_THROW(ExperimentConfig::from_json(noise), ConfigError);
}

TEST(Config, RejectsBadValues) {
    auto name = toy_config();
    name["estimators"][0]["name"] = "mleope";
    EXPECT_THROW(ExperimentConfig::from_json(name), ConfigError);
    auto kind = toy_config();
    kind["experiment"] = "mujoco";
    EXPECT_THROW(ExperimentConfig::from_json(kind), ConfigError);
    auto reps = toy_config();
    reps["replicates"] = 0;
    EXPECT_THROW(ExperimentConfig::from_json(reps), ConfigError);
    auto type = toy_config();
    type["replicates"] = "many";
    EXPECT_THROW(ExperimentConfig::from_json(type), ConfigError);
    auto both = toy_config();
    both["estimators"][0]["total_steps"] = 100;
    both["estimators"][0]["epochs_per_iteration"] = 2;
    EXPECT_THROW(ExperimentConfig::from_json(both), ConfigError);
    auto env = toy_config();
    env["env"]["kind"] = "cartpole";
    EXPECT_THROW(ExperimentConfig::from_json(env), ConfigError);  // toy table needs the toy env
}

TEST(Config, ParsesEstimatorHyperparameters) {
    auto j = toy_config();
    j["estimators"][0] = Json::parse(R"({"name": "dqpope", "hidden": [64, 64, 64], "embedding": "cosine",
        "learning_rate": 0.0005, "final_lr_fraction": 0.0, "batch_size": 64, "total_steps": 1000,
        "target_update": {"kind": "hard", "every": 15}})");
    const auto c = ExperimentConfig::from_json(j);
    const auto& e = c.estimators[0];
    EXPECT_EQ(e.train.hidden, (std::vector<int>{64, 64, 64}));
    EXPECT_EQ(e.train.embedding, TauEmbedding::kCosine);
    EXPECT_EQ(e.train.batch_size, 64);
    EXPECT_DOUBLE_EQ(e.train.gamma, 0.99);
    // 640 transitions = 10 batches of 64, so 1000 steps is 100 epochs.
    EXPECT_EQ(e.for_dataset(640).epochs_per_iteration, 100);
}

TEST(Config, OutputDirOverride) {
    const auto c = ExperimentConfig::from_json(toy_config());
    unsetenv(kOutputDirEnv);
    EXPECT_EQ(c.resolved_output_dir(), fs::path("results"));
    setenv(kOutputDirEnv, "/tmp/elsewhere", 1);
    EXPECT_EQ(c.resolved_output_dir(), fs::path("/tmp/elsewhere"));
    unsetenv(kOutputDirEnv);
}

TEST(ParallelFor, FillsEverySlotAndRethrowsFirstFailure) {
    std::vector<int> out(50, 0);
    parallel_for(50, 4, [&](long i) { out[static_cast<std::size_t>(i)] = static_cast<int>(i * i); });
    for (int i = 0; i < 50; ++i) EXPECT_EQ(out[static_cast<std::size_t>(i)], i * i);
    EXPECT_THROW(parallel_for(10, 3, [](long i) {
                     if (i == 7) throw InputError("boom");
                 }),
                 InputError);
}

TEST(ToyTable, LayoutAndReplicateOrderIndependence) {
    auto cfg = ExperimentConfig::from_json(toy_config());
    cfg.threads = 1;
    const auto serial = run_toy_mse_table(cfg);
    // (#noise settings) x (#estimator columns): 2 x (2 K values + DOPE).
    EXPECT_EQ(serial.cells.size(), 6u);
    cfg.threads = 3;
    const auto pooled = run_toy_mse_table(cfg);
    for (std::size_t i = 0; i < serial.cells.size(); ++i) {
        EXPECT_EQ(serial.cells[i].estimates, pooled.cells[i].estimates);
        EXPECT_GE(serial.cells[i].mse, 0.0);
    }

    // Replicate r only depends on base_seed + r: a config starting one seed later reproduces the tail.
    auto shifted = cfg;
    shifted.base_seed += 1;
    shifted.replicates = 2;
    const auto tail = run_toy_mse_table(shifted);
    for (std::size_t i = 0; i < serial.cells.size(); ++i) {
        EXPECT_EQ(tail.cells[i].estimates[0], serial.cells[i].estimates[1]);
        EXPECT_EQ(tail.cells[i].estimates[1], serial.cells[i].estimates[2]);
    }
}

TEST(ToyTable, CsvSchemaAndByteReproducibility) {
    const fs::path root = fs::temp_directory_path() / "dqpope_test_toy";
    fs::remove_all(root);
    auto cfg = ExperimentConfig::from_json(toy_config());
    cfg.output_dir = root / "a";
    unsetenv(kOutputDirEnv);
    run_experiment(cfg);
    cfg.output_dir = root / "b";
    run_experiment(cfg);
    const auto a = slurp(root / "a" / "toy_mse_table.csv");
    EXPECT_EQ(a, slurp(root / "b" / "toy_mse_table.csv"));
    EXPECT_EQ(slurp(root / "a" / "toy_mse_replicates.csv"), slurp(root / "b" / "toy_mse_replicates.csv"));
    EXPECT_EQ(a.substr(0, a.find('\n')), "noise,estimator,K,mse_x1e3,sd_x1e3,replicates");
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 7);
    EXPECT_EQ(a.back(), '\n');
    fs::remove_all(root);
}

TEST(QuantileCurve, SchemaConstantNetAndSortedTruth) {
    NetArchitecture arch;
    arch.state_dim = 1;
    arch.action_count = 1;
    QuantileNet net(arch);
    net.bias(static_cast<int>(net.layer_count()) - 1)(0) = 2.5;
    Rng rng = make_rng(3);
    std::vector<double> xs(1000);
    for (double& x : xs) x = standard_normal(rng);
    const auto rows = compare_quantiles(
        [&](double tau) { return quantile_curve(net, State{0.0}, 0, {tau}).front().value; }, ReturnDistribution(xs));
    ASSERT_EQ(rows.size(), 99u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_DOUBLE_EQ(rows[i].estimated, 2.5);
        if (i > 0) EXPECT_GE(rows[i].ground_truth, rows[i - 1].ground_truth);
    }
    EXPECT_DOUBLE_EQ(rows.front().tau, 1.0 / 198.0);
    std::stringstream ss;
    emit_quantile_curve(ss, rows);
    const auto text = ss.str();
    EXPECT_EQ(text.substr(0, text.find('\n')), "tau,estimated,ground_truth");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 100);
}

TEST(Contraction, ReportsOneRowPerSetting) {
    const auto c = ExperimentConfig::from_json(
        Json::parse(R"({"experiment": "tabular-contraction", "gammas": [0.9], "p_values": [1, 2], "trials": 30})"));
    const auto rows = run_contraction_suite(c);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_NEAR(rows[0].bound, std::sqrt(0.9), 1e-15);
    EXPECT_NEAR(rows[1].bound, std::pow(0.9, 0.75), 1e-15);
    for (const auto& r : rows) {
        EXPECT_EQ(r.violations, 0);
        EXPECT_LE(r.max_ratio, r.bound + 1e-9);
    }
}

TEST(Sweep, TabularSchemaAndNonNegativeDistances) {
    const auto c = ExperimentConfig::from_json(Json::parse(R"({
      "experiment": "complexity-sweep",
      "env": {"kind": "tabular", "gamma": 0.5, "horizon_cap": 20,
              "mdp": {"transition": [[[0.5, 0.5], [1.0, 0.0]], [[0.0, 1.0], [0.5, 0.5]]],
                      "reward": [[{"atoms": [0.0], "probs": [1.0]}, {"atoms": [1.0], "probs": [1.0]}],
                                 [{"atoms": [2.0], "probs": [1.0]}, {"atoms": [0.0, 2.0], "probs": [0.5, 0.5]}]],
                      "target_policy": [[0.5, 0.5], [0.5, 0.5]],
                      "initial": [1.0, 0.0]}},
      "estimators": [{"name": "dqpope", "epochs_per_iteration": 2}],
      "sample_sizes": [200, 400],
      "mixture_rates": [1.0, 0.5],
      "replicates": 2,
      "oracle_rollouts": 500,
      "eval_draws": 500
    })"));
    const auto s = run_complexity_sweep(c);
    EXPECT_EQ(s.rows.size(), 8u);
    for (const auto& r : s.rows) EXPECT_GE(r.w1, 0.0);
    EXPECT_EQ(s.curve.size(), 99u);
    EXPECT_GE(s.mean_w1(0.5, 400), 0.0);
    EXPECT_THROW(s.mean_w1(0.3, 400), InputError);
}

TEST(Oracle, TabularMeanMatchesExactValue) {
    auto c = ExperimentConfig::from_json(Json::parse(R"({
      "experiment": "complexity-sweep",
      "env": {"kind": "tabular", "gamma": 0.5, "horizon_cap": 60,
              "mdp": {"transition": [[[0.9, 0.1], [0.2, 0.8]], [[0.5, 0.5], [0.1, 0.9]]],
                      "reward": [[{"atoms": [0.0], "probs": [1.0]}, {"atoms": [1.0], "probs": [1.0]}],
                                 [{"atoms": [2.0], "probs": [1.0]}, {"atoms": [0.0, 4.0], "probs": [0.5, 0.5]}]],
                      "target_policy": [[0.2, 0.8], [0.7, 0.3]],
                      "initial": [1.0, 0.0]}},
      "estimators": [{"name": "dqpope"}],
      "sample_sizes": [100],
      "oracle_rollouts": 40000
    })"));
    const auto law = run_oracle(c);
    EXPECT_EQ(law.size(), 40000u);
    EXPECT_NEAR(law.mean(), exact_policy_value(*c.env.mdp, c.env.mdp->target_policy), 0.03);
}

}  // namespace
}  // namespace dqpope
