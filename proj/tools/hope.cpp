// Command-line front end for the benchmark pipeline.

#include "hope/errors.hpp"
#include "hope/experiment.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::string estimators;
    bool check = false;
    std::string dataset;
    std::string rhat;
    std::string ground_truth;
    std::optional<std::size_t> k;
    std::optional<double> h;
    bool all_critical = false;
    bool elbow = false;
    std::optional<std::size_t> sweeps;
    std::optional<std::size_t> bootstrap;
};

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config_path, "experiment config (JSON)");
    cmd->add_option("--seed", o.seed, "master seed (overrides the config)");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--estimators", o.estimators, "comma-separated estimator names");
    cmd->add_option("--k", o.k, "neighbor count K");
    cmd->add_option("--threshold", o.h, "fixed critical threshold h");
    cmd->add_flag("--all-critical", o.all_critical, "treat every observation as critical");
    cmd->add_flag("--elbow", o.elbow, "pick h with the elbow method");
    cmd->add_option("--sweeps", o.sweeps, "Q-fitting sweep limit");
    cmd->add_option("--bootstrap", o.bootstrap, "bootstrap replica count B");
}

hope::ExperimentConfig resolve_config(const Options& o) {
    hope::ExperimentConfig c;
    if (!o.config_path.empty()) c = hope::load_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (!o.estimators.empty()) {
        c.estimators.clear();
        std::stringstream ss(o.estimators);
        std::string name;
        while (std::getline(ss, name, ',')) {
            if (!name.empty()) c.estimators.push_back(name);
        }
        for (auto it = c.reward_channels.begin(); it != c.reward_channels.end();) {
            if (std::find(c.estimators.begin(), c.estimators.end(), it->first) == c.estimators.end()) {
                it = c.reward_channels.erase(it);
            } else {
                ++it;
            }
        }
    }
    if (o.k) c.k = *o.k;
    if (static_cast<int>(o.h.has_value()) + static_cast<int>(o.all_critical) + static_cast<int>(o.elbow) > 1) {
        throw hope::ConfigError("h_mode", "--threshold, --all-critical and --elbow are mutually exclusive");
    }
    if (o.h) {
        c.h_mode = hope::HMode::fixed;
        c.h = *o.h;
    }
    if (o.all_critical) c.h_mode = hope::HMode::all_critical;
    if (o.elbow) c.h_mode = hope::HMode::elbow;
    if (o.sweeps) c.q_sweeps = *o.sweeps;
    if (o.bootstrap) c.bootstrap_b = *o.bootstrap;
    c.validate();
    return c;
}

std::string require(const std::string& value, const char* flag) {
    if (value.empty()) throw hope::ConfigError(flag, "required for this subcommand");
    return value;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Off-policy evaluation benchmark with aggregated rewards"};
    app.require_subcommand(1);
    Options o;

    auto* simulate = app.add_subcommand("simulate", "simulate behavior trajectories");
    add_common(simulate, o);

    auto* reconstruct = app.add_subcommand("reconstruct", "reconstruct per-step rewards");
    add_common(reconstruct, o);
    reconstruct->add_option("--dataset", o.dataset, "dataset file (JSON Lines)");

    auto* evaluate = app.add_subcommand("evaluate", "run the estimators and metrics");
    add_common(evaluate, o);
    evaluate->add_option("--dataset", o.dataset, "dataset file (JSON Lines)");
    evaluate->add_option("--rhat", o.rhat, "reconstructed reward file");
    evaluate->add_option("--ground-truth", o.ground_truth, "ground-truth reward sidecar");

    auto* benchmark = app.add_subcommand("benchmark", "simulate, reconstruct and evaluate");
    add_common(benchmark, o);
    benchmark->add_flag("--check", o.check, "exit with status 2 when an acceptance check fails");

    auto* report = app.add_subcommand("report", "summarize an evaluated run directory");
    report->add_option("--out", o.out, "run directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (report->parsed()) {
            std::ostringstream text;
            hope::cmd_report(o.out, text);
            std::cout << text.str();
            std::ofstream(o.out + "/report.md", std::ios::binary) << text.str();
            return 0;
        }
        const hope::ExperimentConfig config = resolve_config(o);
        if (simulate->parsed()) {
            hope::cmd_simulate(config, o.out, std::cout);
        } else if (reconstruct->parsed()) {
            hope::cmd_reconstruct(config, require(o.dataset, "--dataset"), o.out, std::cout);
        } else if (evaluate->parsed()) {
            std::optional<std::string> truth;
            if (!o.ground_truth.empty()) truth = o.ground_truth;
            hope::cmd_evaluate(config, require(o.dataset, "--dataset"), require(o.rhat, "--rhat"), truth, o.out,
                               std::cout);
        } else if (benchmark->parsed()) {
            const auto outcome = hope::cmd_benchmark(config, o.out, std::cout);
            if (o.check && !outcome.all_passed()) return 2;
        }
    } catch (const hope::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
