#include <CLI11.hpp>

#include <cstdio>
#include <set>
#include <string>

#include "seglife/experiment.hpp"

using namespace seglife;

int main(int argc, char** argv) {
    CLI::App app{"per-domain batch-norm segmentation pipeline"};
    app.require_subcommand(1);
    app.fallthrough(); // allow global flags after the subcommand

    std::string config_path;
    std::string out_override;
    uint64_t seed_override = 0;
    bool seed_set = false;
    int jobs_override = 0;
    std::vector<std::string> networks;

    app.add_option("-c,--config", config_path, "experiment config (JSON)")->required();
    app.add_option("-o,--out", out_override, "override the output directory from the config");
    app.add_option("-s,--seed", seed_override, "override the master seed")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("-j,--jobs", jobs_override, "worker threads for evaluation fan-out");

    auto* gen = app.add_subcommand("gen", "generate the per-domain datasets");
    auto* train = app.add_subcommand("train", "train the dedicated, shared and per-domain-BN nets");
    train->add_option("--networks", networks,
                      "subset of checkpoints to produce (e.g. n1 n123 nbn); default all");
    auto* adapt = app.add_subcommand("adapt", "adapt to the new domains and fine-tune baselines");
    auto* eval = app.add_subcommand("eval", "evaluate every checkpoint and write the dice report");
    auto* report = app.add_subcommand("report", "check the expected result patterns");
    auto* run = app.add_subcommand("run", "all stages in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 1 : 0;
    }

    try {
        ExperimentConfig cfg = ExperimentConfig::load(config_path);
        if (!out_override.empty()) cfg.out = out_override;
        if (seed_set) cfg.seed = seed_override;
        if (jobs_override > 0) cfg.jobs = jobs_override;

        if (gen->parsed() || run->parsed()) cmd_gen(cfg);
        if (train->parsed() || run->parsed())
            cmd_train(cfg, std::set<std::string>(networks.begin(), networks.end()));
        if (adapt->parsed() || run->parsed()) cmd_adapt(cfg);
        if (eval->parsed() || run->parsed()) cmd_eval(cfg);
        if (report->parsed() || run->parsed()) return cmd_report(cfg);
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 3;
    }
}
