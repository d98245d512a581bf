// dqpope: run experiments from JSON configs, dump Monte-Carlo oracles, run property checks.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dqpope/checks.hpp"
#include "dqpope/experiments.hpp"

namespace {

int run_checks() {
    bool ok = true;
    for (const auto& r : dqpope::checks::all_fast_checks()) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributional off-policy evaluation experiments"};
    app.require_subcommand(1);

    std::string run_config;
    auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
    run->add_option("config", run_config, "JSON config path")->required()->check(CLI::ExistingFile);

    std::string oracle_config;
    auto* oracle = app.add_subcommand("oracle", "Write the Monte-Carlo return law of the target policy");
    oracle->add_option("config", oracle_config, "JSON config path")->required()->check(CLI::ExistingFile);

    app.add_subcommand("check", "Run the built-in property suites");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto cfg = dqpope::ExperimentConfig::from_file(run_config);
            const auto dir = dqpope::run_experiment(cfg);
            std::cout << "wrote " << cfg.kind << " results to " << dir.string() << '\n';
            return 0;
        }
        if (*oracle) {
            const auto cfg = dqpope::ExperimentConfig::from_file(oracle_config);
            const auto dir = cfg.resolved_output_dir();
            const auto law = dqpope::run_oracle(cfg);
            dqpope::write_oracle(law, dir);
            std::cout << "wrote " << law.size() << " oracle returns (mean " << dqpope::csv::format_number(law.mean())
                      << ") to " << (dir / "oracle_returns.csv").string() << '\n';
            return 0;
        }
        return run_checks();
    } catch (const dqpope::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
